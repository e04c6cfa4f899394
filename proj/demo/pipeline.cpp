// Toy-model walk-through: prototypes and calibration from the bundled query
// lists, then steered generation for one unsafe-looking and one benign query.

#include <cstdio>
#include <filesystem>

#include "ras/harness.hpp"
#include "ras/steering.hpp"

int main() {
    using namespace ras;
    const auto model = toy::ToyModel::build({});
    const std::filesystem::path assets = RAS_ASSET_DIR;
    const auto unsafe = harness::load_lines(assets / "unsafe_text_queries.txt");
    const auto benign = harness::load_lines(assets / "benign_text_queries.txt");
    const auto art = harness::prepare_toy(model, unsafe, benign);
    std::printf("s_base = %.4f  alpha = %.4f\n", art.params.s_base, art.params.alpha);

    steering::PipelineConfig config;
    config.params = art.params;
    config.prototypes = &art.prototypes;
    const auto visual = harness::synthetic_visual_tokens(42, 16, model.config().vocab);
    for (const auto& text : {unsafe.front(), benign.front()}) {
        const steering::Query q{"demo", visual, text, std::nullopt};
        const auto g = steering::ras_generate(model, q, config);
        std::printf("\n%s\n  s = %.4f  r = %.4f\n  tokens:", text.c_str(), g.similarity, g.risk);
        for (auto t : g.tokens) std::printf(" %u", t);
        std::printf("\n");
    }
}
