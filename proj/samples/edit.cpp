// One-token edit with the default attention plan, compared with no manipulation.
#include <cstdio>

#include "rkflow/rkflow.hpp"

int main() {
    using namespace rkflow;
    const ToyMMDiT model{ToyMMDiTConfig{}};
    Rng rng(11);
    const Latent z0 = Latent::gaussian(model.config().latent_shape(), rng);

    EditConfig cfg;
    cfg.source_prompt = {17, 42, 99};
    cfg.target_prompt = {17, 43, 99};

    const auto with_plan = edit(model, z0, cfg);
    cfg.plan = cfg.plan.with_all(RegionOp::none);
    const auto without = edit(model, z0, cfg);

    std::printf("deviation with default plan: %.6f (nfe %d)\n", with_plan.deviation_from_source, with_plan.nfe_total);
    std::printf("deviation without manipulation: %.6f\n", without.deviation_from_source);
}
