// Reconstruction error of several tableaus on the default toy model.
#include <cstdio>

#include "rkflow/rkflow.hpp"

int main() {
    using namespace rkflow;
    const ToyMMDiT model{ToyMMDiTConfig{}};
    Rng rng(7);
    const Latent z0 = Latent::gaussian(model.config().latent_shape(), rng);
    const std::vector<int> tokens{12, 34, 56};
    const PromptEmbedding prompt = model.embed_prompt(tokens);
    const Conditioning cond{&prompt, 1.0};
    const TimeGrid grid = TimeGrid::uniform(30);

    std::printf("%-18s %6s %14s %10s\n", "tableau", "nfe", "rel_error", "psnr_db");
    for (const char* name : {"euler", "heun2", "kutta3", "classic4"}) {
        const auto rep = reconstruct(model, z0, grid, registry_get(name), cond);
        std::printf("%-18s %6d %14.6e %10.3f\n", name, rep.nfe_total, rep.metrics.rel, rep.metrics.psnr);
    }
    const auto ff = reconstruct(model, z0, grid, registry_get("fireflow_midpoint"), cond, true);
    std::printf("%-18s %6d %14.6e %10.3f\n", "fireflow (reuse)", ff.nfe_total, ff.metrics.rel, ff.metrics.psnr);
}
