#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "microseg/synthgen.hpp"
#include "microseg/train.hpp"

using namespace microseg;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_net() {
    NetConfig cfg;
    cfg.block_channels = {4, 8};
    cfg.convs_per_block = 1;
    cfg.mlp_widths = {8};
    cfg.num_classes = 4;
    return cfg;
}

TrainConfig tiny_schedule() {
    TrainConfig tc;
    tc.images_per_batch = 2;
    tc.pixels_per_image = 64;
    tc.phase1_updates = 3;
    tc.phase2_updates = 2;
    tc.augment.enabled = false;
    return tc;
}

std::vector<DatasetItem> tiny_dataset(int n, int size, uint64_t seed) {
    std::vector<DatasetItem> items;
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.size = size;
        spec.seed = seed + static_cast<uint64_t>(i);
        auto scene = generate_microconstituent_scene(spec);
        items.push_back({std::move(scene.image), std::move(scene.labels), {}});
    }
    return items;
}

}  // namespace

TEST_CASE("history covers both phases with 1-based update numbering") {
    auto dataset = tiny_dataset(3, 32, 10);
    Model model = init_model(tiny_net(), 1);
    TrainConfig tc = tiny_schedule();
    LossParams loss;

    TrainResult result = train(model, dataset, tc, loss);
    REQUIRE(result.history.size() == 5);
    for (size_t i = 0; i < result.history.size(); ++i) {
        CHECK(result.history[i].update == static_cast<int>(i) + 1);
        CHECK(result.history[i].phase == (i < 3 ? 1 : 2));
        CHECK(std::isfinite(result.history[i].loss));
    }
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
    auto dataset = tiny_dataset(3, 32, 20);
    TrainConfig tc = tiny_schedule();
    tc.seed = 9;
    LossParams loss;

    Model a = init_model(tiny_net(), 2);
    Model b = init_model(tiny_net(), 2);
    TrainResult ra = train(a, dataset, tc, loss);
    TrainResult rb = train(b, dataset, tc, loss);

    for (size_t i = 0; i < a.params.size(); ++i)
        CHECK(a.params[i].value.data == b.params[i].value.data);
    for (size_t i = 0; i < a.buffers.size(); ++i)
        CHECK(a.buffers[i].second.data == b.buffers[i].second.data);
    REQUIRE(ra.history.size() == rb.history.size());
    for (size_t i = 0; i < ra.history.size(); ++i)
        CHECK(ra.history[i].loss == rb.history[i].loss);

    tc.seed = 10;
    Model c = init_model(tiny_net(), 2);
    TrainResult rc = train(c, dataset, tc, loss);
    CHECK(ra.history[0].loss != rc.history[0].loss);
}

TEST_CASE("phase 1 leaves the backbone at its initialization") {
    auto dataset = tiny_dataset(2, 32, 30);
    TrainConfig tc = tiny_schedule();
    tc.phase2_updates = 0;  // phase 1 only
    Model model = init_model(tiny_net(), 3);

    std::vector<std::vector<double>> before;
    for (const Param& p : model.params) before.push_back(p.value.data);
    train(model, dataset, tc, LossParams{});

    for (size_t i = 0; i < model.params.size(); ++i) {
        if (model.params[i].backbone)
            CHECK(model.params[i].value.data == before[i]);
        else
            CHECK(model.params[i].value.data != before[i]);
    }
}

TEST_CASE("crossval_split deals balanced disjoint folds") {
    std::mt19937_64 rng(40);
    auto folds = crossval_split(24, 6, rng);
    REQUIRE(folds.size() == 6);
    std::set<size_t> seen;
    for (const auto& f : folds) {
        CHECK(f.size() == 4);
        seen.insert(f.begin(), f.end());
    }
    CHECK(seen.size() == 24);
    CHECK(*seen.rbegin() == 23);

    auto uneven = crossval_split(10, 4, rng);
    std::vector<size_t> sizes;
    for (const auto& f : uneven) sizes.push_back(f.size());
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes == std::vector<size_t>{2, 2, 3, 3});

    CHECK_THROWS_AS(crossval_split(3, 4, rng), ImageError);
    CHECK_THROWS_AS(crossval_split(3, 0, rng), ImageError);
}

TEST_CASE("mean and standard error") {
    MetricStat s = mean_se({2.0, 4.0, 6.0});
    REQUIRE(s.mean.has_value());
    CHECK(*s.mean == doctest::Approx(4.0));
    CHECK(*s.se == doctest::Approx(2.0 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(s.n == 3);

    MetricStat one = mean_se({5.0});
    CHECK(*one.mean == doctest::Approx(5.0));
    CHECK(*one.se == 0.0);

    MetricStat none = mean_se({});
    CHECK_FALSE(none.mean.has_value());
    CHECK(none.n == 0);
}

TEST_CASE("train setup json round trip with defaults for omitted sections") {
    const fs::path dir = fs::temp_directory_path() / "microseg_train_tests";
    fs::create_directories(dir);

    TrainSetup setup;
    setup.net = tiny_net();
    setup.train = tiny_schedule();
    setup.train.phase1_lr = 0.005;
    setup.loss.kind = LossParams::Kind::CrossEntropy;
    setup.loss.alpha = {0.1, 0.2, 0.3, 0.4};

    const fs::path p = dir / "setup.json";
    save_train_setup(setup, p);
    TrainSetup back = load_train_setup(p);

    CHECK(back.net.block_channels == setup.net.block_channels);
    CHECK(back.train.phase1_lr == setup.train.phase1_lr);
    CHECK(back.train.images_per_batch == setup.train.images_per_batch);
    CHECK(back.train.augment.enabled == setup.train.augment.enabled);
    CHECK(back.loss.kind == LossParams::Kind::CrossEntropy);
    CHECK(back.loss.alpha == setup.loss.alpha);

    std::ofstream(dir / "partial.json") << "{\"loss\": {\"kind\": \"focal\", \"gamma\": 3}}\n";
    TrainSetup partial = load_train_setup(dir / "partial.json");
    CHECK(partial.train.phase1_updates == 125);  // untouched default
    CHECK(partial.loss.gamma == 3.0);

    std::ofstream(dir / "bad.json") << "{\"loss\": {\"kind\": \"hinge\"}}\n";
    CHECK_THROWS_AS(load_train_setup(dir / "bad.json"), ImageError);
}

TEST_CASE("validation rejects impossible schedules") {
    TrainConfig tc;
    tc.images_per_batch = 0;
    CHECK_THROWS_AS(tc.validate(), ImageError);
    tc = TrainConfig{};
    tc.phase1_lr = -1;
    CHECK_THROWS_AS(tc.validate(), ImageError);

    Model model = init_model(tiny_net(), 1);
    CHECK_THROWS_AS(train(model, {}, TrainConfig{}, LossParams{}), ImageError);
}
