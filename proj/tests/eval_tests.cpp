#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "gradweave/eval.hpp"

using namespace gradweave;

namespace {

ModelConfig tiny_model(int classes) {
    ModelConfig mc;
    mc.height = 16;
    mc.width = 8;
    mc.trunk_channels = {4, 6, 8};
    mc.embed_dim = 8;
    mc.num_classes = classes;
    mc.aux_channels = 4;
    return mc;
}

BenchmarkSpec tiny_benchmark_spec() {
    BenchmarkSpec spec = default_benchmark_spec();
    spec.domains.resize(2);
    spec.identities_per_domain = 4;
    spec.samples_per_identity = 4;
    spec.height = 16;
    spec.width = 8;
    spec.seed = 17;
    return spec;
}

// Unit 2-d embedding at the given angle; distance from angle 0 grows with
// the angle on [0, pi].
void set_angle(Tensor& emb, int row, double angle) {
    emb.ptr()[2 * row] = static_cast<float>(std::cos(angle));
    emb.ptr()[2 * row + 1] = static_cast<float>(std::sin(angle));
}

Tensor random_unit_rows(int n, int d, uint64_t seed) {
    Tensor out = Tensor::zeros({n, d});
    Rng rng(seed);
    for (int r = 0; r < n; ++r) {
        double norm2 = 0;
        float* row = out.ptr() + static_cast<size_t>(r) * d;
        for (int k = 0; k < d; ++k) {
            row[k] = rng.uniform(-1.f, 1.f);
            norm2 += static_cast<double>(row[k]) * row[k];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
        for (int k = 0; k < d; ++k) row[k] *= inv;
    }
    return out;
}

// Composition of random Givens rotations: orthogonal up to float rounding.
Tensor rotate_rows(const Tensor& emb, uint64_t seed) {
    Tensor out = emb;
    const int n = emb.dim(0), d = emb.dim(1);
    Rng rng(seed);
    for (int rep = 0; rep < 3 * d; ++rep) {
        const int i = rng.next_int(0, d - 1);
        const int j = rng.next_int(0, d - 1);
        if (i == j) continue;
        const double a = rng.uniform(0.0, 6.283185307179586);
        const double c = std::cos(a), s = std::sin(a);
        for (int r = 0; r < n; ++r) {
            float* row = out.ptr() + static_cast<size_t>(r) * d;
            const double x = row[i], y = row[j];
            row[i] = static_cast<float>(c * x - s * y);
            row[j] = static_cast<float>(s * x + c * y);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("average precision matches hand-worked cases exactly") {
    CHECK(average_precision({1, 0, 1}) == (1.0 + 2.0 / 3.0) / 2.0);
    CHECK(average_precision({1, 1, 1}) == 1.0);
    CHECK(average_precision({0, 0, 1}) == 1.0 / 3.0);
    CHECK(average_precision({}) == 0.0);
    CHECK(average_precision({0, 0, 0}) == 0.0);
    CHECK(average_precision({0, 1}) == 0.5);
}

TEST_CASE("average precision equals a brute-force prefix oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.next_int(1, 60);
        std::vector<char> rel(static_cast<size_t>(n));
        const double density = rng.next_double();
        for (auto& r : rel) r = rng.bernoulli(density) ? 1 : 0;

        // Direct formula: precision at k recomputed from scratch per prefix.
        double sum = 0;
        int relevant = 0;
        for (int k = 0; k < n; ++k) {
            if (!rel[static_cast<size_t>(k)]) continue;
            int prefix_hits = 0;
            for (int i = 0; i <= k; ++i) prefix_hits += rel[static_cast<size_t>(i)] ? 1 : 0;
            sum += static_cast<double>(prefix_hits) / static_cast<double>(k + 1);
            ++relevant;
        }
        const double oracle = relevant ? sum / relevant : 0.0;
        CHECK(average_precision(rel) == oracle);
    }
}

TEST_CASE("demoting a relevant item past a distractor never raises average precision") {
    Rng rng(77);
    int exercised = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = rng.next_int(2, 40);
        std::vector<char> rel(static_cast<size_t>(n));
        for (auto& r : rel) r = rng.bernoulli(0.4) ? 1 : 0;

        // Pick a relevant position with some irrelevant position after it.
        std::vector<std::pair<int, int>> swaps;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rel[static_cast<size_t>(i)] && !rel[static_cast<size_t>(j)])
                    swaps.emplace_back(i, j);
        if (swaps.empty()) continue;
        const auto [i, j] = swaps[static_cast<size_t>(
            rng.next_int(0, static_cast<int>(swaps.size()) - 1))];
        std::vector<char> demoted = rel;
        std::swap(demoted[static_cast<size_t>(i)], demoted[static_cast<size_t>(j)]);
        CHECK(average_precision(demoted) <= average_precision(rel));
        ++exercised;
    }
    CHECK(exercised > 400);
}

TEST_CASE("embeddings have unit rows, duplicate rows duplicate, and follow permutations") {
    const ModelConfig mc = tiny_model(2);
    const ModelParams params = init_params(mc, 3);
    Tensor images = Tensor::zeros({7, 3, mc.height, mc.width});
    Rng rng(5);
    for (float& x : images.data) x = rng.next_float();

    std::vector<int> rows(7);
    std::iota(rows.begin(), rows.end(), 0);
    const Tensor emb = extract_embeddings(params, images, rows);
    REQUIRE(emb.dim(0) == 7);
    REQUIRE(emb.dim(1) == mc.embed_dim);
    for (int r = 0; r < 7; ++r) {
        double norm2 = 0;
        for (int k = 0; k < mc.embed_dim; ++k) {
            const double v = emb.ptr()[r * mc.embed_dim + k];
            norm2 += v * v;
        }
        CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-4));
    }

    const Tensor dup = extract_embeddings(params, images, {4, 4});
    for (int k = 0; k < mc.embed_dim; ++k) CHECK(dup.ptr()[k] == dup.ptr()[mc.embed_dim + k]);

    const std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
    const Tensor pemb = extract_embeddings(params, images, perm);
    for (size_t i = 0; i < perm.size(); ++i)
        for (int k = 0; k < mc.embed_dim; ++k)
            CHECK(pemb.ptr()[static_cast<size_t>(i) * mc.embed_dim + static_cast<size_t>(k)] ==
                  emb.ptr()[static_cast<size_t>(perm[i]) * mc.embed_dim + static_cast<size_t>(k)]);

    CHECK_THROWS_AS(extract_embeddings(params, images, {7}), std::invalid_argument);
    CHECK_THROWS_AS(extract_embeddings(params, images, {-1}), std::invalid_argument);
}

TEST_CASE("one-query retrieval reproduces the worked example with camera exclusion") {
    // Query id 0 cam 0; gallery by distance: match (cam 1), distractor,
    // match (cam 2), plus a same-camera match that must be excluded even
    // though it is nearest.
    std::vector<SampleInfo> samples(5);
    samples[0] = {0, 0, 0};
    samples[1] = {0, 1, 0};  // rank 1, relevant
    samples[2] = {1, 5, 0};  // rank 2, distractor
    samples[3] = {0, 2, 0};  // rank 3, relevant
    samples[4] = {0, 0, 0};  // same identity + camera: excluded

    RetrievalSplit split;
    split.query_rows = {0};
    split.gallery_rows = {1, 2, 3, 4};
    Tensor qe = Tensor::zeros({1, 2});
    set_angle(qe, 0, 0.0);
    Tensor ge = Tensor::zeros({4, 2});
    set_angle(ge, 0, 0.3);
    set_angle(ge, 1, 0.6);
    set_angle(ge, 2, 0.9);
    set_angle(ge, 3, 0.01);  // nearest of all, but excluded

    const MetricsReport r = evaluate_embeddings(samples, split, qe, ge);
    CHECK(r.evaluated == 1);
    CHECK(r.excluded == 0);
    CHECK(r.map == (1.0 + 2.0 / 3.0) / 2.0);
    CHECK(r.rank1 == 1.0);
    REQUIRE(r.per_domain.size() == 1);
    CHECK(r.per_domain[0].domain == 0);
    CHECK(r.per_domain[0].map == r.map);
}

TEST_CASE("tight identity clusters give perfect retrieval") {
    // 4 identities x 2 cameras; clusters separated by large angles, the two
    // samples of an identity nearly coincide.
    std::vector<SampleInfo> samples;
    Tensor emb = Tensor::zeros({8, 2});
    for (int id = 0; id < 4; ++id)
        for (int cam = 0; cam < 2; ++cam) {
            samples.push_back({id, cam, 0});
            set_angle(emb, id * 2 + cam, 0.7 * id + 0.01 * cam);
        }
    RetrievalSplit split;
    split.query_rows.resize(8);
    std::iota(split.query_rows.begin(), split.query_rows.end(), 0);
    split.gallery_rows = split.query_rows;

    const MetricsReport r = evaluate_embeddings(samples, split, emb, emb);
    CHECK(r.evaluated == 8);
    CHECK(r.map == 1.0);
    CHECK(r.rank1 == 1.0);
}

TEST_CASE("queries with no cross-camera positive are excluded and counted") {
    // Identity 0 exists only under camera 0, identity 1 under two cameras.
    std::vector<SampleInfo> samples = {{0, 0, 0}, {0, 0, 0}, {1, 0, 0}, {1, 1, 0}};
    Tensor emb = Tensor::zeros({4, 2});
    for (int r = 0; r < 4; ++r) set_angle(emb, r, 0.4 * r);
    RetrievalSplit split;
    split.query_rows = {0, 1, 2, 3};
    split.gallery_rows = {0, 1, 2, 3};

    const MetricsReport r = evaluate_embeddings(samples, split, emb, emb);
    CHECK(r.evaluated == 2);
    CHECK(r.excluded == 2);
    CHECK(r.map >= 0.0);
    CHECK(r.map <= 1.0);

    // Nothing evaluable at all.
    std::vector<SampleInfo> lone = {{0, 0, 0}, {0, 0, 0}};
    RetrievalSplit s2;
    s2.query_rows = {0, 1};
    s2.gallery_rows = {0, 1};
    Tensor e2 = Tensor::zeros({2, 2});
    set_angle(e2, 0, 0.0);
    set_angle(e2, 1, 1.0);
    const MetricsReport r2 = evaluate_embeddings(lone, s2, e2, e2);
    CHECK(r2.evaluated == 0);
    CHECK(r2.excluded == 2);
    CHECK(r2.map == 0.0);
    CHECK(r2.rank1 == 0.0);
}

TEST_CASE("random embeddings score near the relevant-fraction prior") {
    // Balanced gallery: 2 identities x 40 samples, every sample under its
    // own camera, so each query sees 39 relevant of 79 valid items. Random
    // rankings have a small positive AP bias that shrinks as the relevant
    // count grows; at this balance it stays inside the 0.05 window.
    std::vector<SampleInfo> samples;
    for (int id = 0; id < 2; ++id)
        for (int s = 0; s < 40; ++s) samples.push_back({id, id * 40 + s, 0});
    RetrievalSplit split;
    split.query_rows.resize(80);
    std::iota(split.query_rows.begin(), split.query_rows.end(), 0);
    split.gallery_rows = split.query_rows;

    double mean_map = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor emb = random_unit_rows(80, 8, 1000 + seed);
        const MetricsReport r = evaluate_embeddings(samples, split, emb, emb);
        CHECK(r.evaluated == 80);
        mean_map += r.map;
    }
    mean_map /= 20.0;
    CHECK(std::abs(mean_map - 39.0 / 79.0) < 0.05);
}

TEST_CASE("metrics are invariant under gallery permutation and global rotation") {
    std::vector<SampleInfo> samples;
    for (int id = 0; id < 8; ++id)
        for (int cam = 0; cam < 3; ++cam) samples.push_back({id, cam, id % 2});
    const int n = static_cast<int>(samples.size());
    const Tensor emb = random_unit_rows(n, 8, 42);
    RetrievalSplit split;
    split.query_rows.resize(static_cast<size_t>(n));
    std::iota(split.query_rows.begin(), split.query_rows.end(), 0);
    split.gallery_rows = split.query_rows;
    const MetricsReport base = evaluate_embeddings(samples, split, emb, emb);
    CHECK(base.per_domain.size() == 2);

    // Permute the gallery (rows and embeddings together).
    std::vector<int> perm(split.gallery_rows);
    Rng rng(9);
    rng.shuffle(perm);
    Tensor pemb = Tensor::zeros({n, 8});
    for (int i = 0; i < n; ++i)
        std::copy_n(emb.ptr() + static_cast<size_t>(perm[static_cast<size_t>(i)]) * 8, 8,
                    pemb.ptr() + static_cast<size_t>(i) * 8);
    RetrievalSplit permuted;
    permuted.query_rows = split.query_rows;
    permuted.gallery_rows = perm;
    const MetricsReport rp = evaluate_embeddings(samples, permuted, emb, pemb);
    CHECK(rp.map == base.map);
    CHECK(rp.rank1 == base.rank1);
    CHECK(rp.evaluated == base.evaluated);

    // Rotate every embedding by one global orthogonal transform.
    const Tensor rot = rotate_rows(emb, 11);
    const MetricsReport rr = evaluate_embeddings(samples, split, rot, rot);
    CHECK(rr.map == base.map);
    CHECK(rr.rank1 == base.rank1);
}

TEST_CASE("demoting a gallery match past a distractor never improves the metrics") {
    std::vector<SampleInfo> samples = {{0, 0, 0}, {0, 1, 0}, {1, 4, 0}, {0, 2, 0}};
    RetrievalSplit split;
    split.query_rows = {0};
    split.gallery_rows = {1, 2, 3};
    Tensor qe = Tensor::zeros({1, 2});
    set_angle(qe, 0, 0.0);
    Tensor ge = Tensor::zeros({3, 2});
    set_angle(ge, 0, 0.3);
    set_angle(ge, 1, 0.6);
    set_angle(ge, 2, 0.9);
    const MetricsReport before = evaluate_embeddings(samples, split, qe, ge);

    // Swap the top-ranked match with the distractor behind it.
    Tensor demoted = ge;
    for (int k = 0; k < 2; ++k) std::swap(demoted.ptr()[k], demoted.ptr()[2 + k]);
    const MetricsReport after = evaluate_embeddings(samples, split, qe, demoted);
    CHECK(after.map <= before.map);
    CHECK(after.rank1 <= before.rank1);
    CHECK(after.map == (0.5 + 2.0 / 3.0) / 2.0);
    CHECK(after.rank1 == 0.0);
}

TEST_CASE("target split selects one domain and validates camera coverage") {
    const Dataset ds = build_benchmark(tiny_benchmark_spec());
    const RetrievalSplit split = make_target_split(ds, 1);
    CHECK(split.query_rows == split.gallery_rows);
    CHECK(split.query_rows.size() == 16);
    for (int r : split.query_rows) CHECK(ds.samples[static_cast<size_t>(r)].domain == 1);

    CHECK_THROWS_AS(make_target_split(ds, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_target_split(ds, -1), std::invalid_argument);

    Dataset bad;
    bad.spec.domains.resize(1);
    bad.samples = {{0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS(make_target_split(bad, 0), std::invalid_argument);
}

TEST_CASE("deployment evaluation with zero update steps matches plain evaluation") {
    const Dataset ds = build_benchmark(tiny_benchmark_spec());
    ModelConfig mc = tiny_model(4);
    const ModelParams params = init_params(mc, 23);
    const RetrievalSplit split = make_target_split(ds, 0);
    const MetricsReport plain = evaluate(params, ds, split);

    TTOConfig tto;
    tto.steps = 0;
    tto.lr = 1e-2f;
    tto.batch_size = 7;  // 16 rows: exercises ragged batching
    const MetricsReport zero = tto_evaluate(params, mc, ds, split, tto);
    CHECK(zero.map == plain.map);
    CHECK(zero.rank1 == plain.rank1);
    CHECK(zero.evaluated == plain.evaluated);

    // One batch: persist and reset-per-batch coincide exactly.
    tto.steps = 1;
    tto.batch_size = 64;
    tto.persistence = TTOPersistence::persist;
    const MetricsReport persist = tto_evaluate(params, mc, ds, split, tto);
    tto.persistence = TTOPersistence::reset_per_batch;
    const MetricsReport reset = tto_evaluate(params, mc, ds, split, tto);
    CHECK(persist.map == reset.map);
    CHECK(persist.rank1 == reset.rank1);

    RetrievalSplit asym = split;
    asym.gallery_rows.pop_back();
    CHECK_THROWS_AS(tto_evaluate(params, mc, ds, asym, tto), std::invalid_argument);
}

TEST_CASE("tto sweep returns one report per update count with a plain k=0 column") {
    const Dataset ds = build_benchmark(tiny_benchmark_spec());
    const ModelConfig mc = tiny_model(4);
    const ModelParams params = init_params(mc, 29);
    TTOConfig tto;
    tto.lr = 1e-3f;
    tto.batch_size = 64;

    const auto sweep = run_tto_sweep(params, mc, ds, 1, 2, tto);
    REQUIRE(sweep.size() == 3);
    const MetricsReport plain = evaluate(params, ds, make_target_split(ds, 1));
    CHECK(sweep[0].map == plain.map);
    CHECK(sweep[0].rank1 == plain.rank1);
    CHECK_THROWS_AS(run_tto_sweep(params, mc, ds, 1, -1, tto), std::invalid_argument);
}

TEST_CASE("ablation grid emits nine labeled rows per target with seed aggregates") {
    const Dataset ds = build_benchmark(tiny_benchmark_spec());
    TrainConfig base;
    base.epochs = 1;
    base.p = 2;
    base.k = 2;
    base.lr = 1e-3f;
    TTOConfig tto;
    tto.steps = 1;
    tto.lr = 1e-4f;
    tto.batch_size = 64;

    const auto rows = run_ablation(ds, base, tto, {1}, {0, 1});
    REQUIRE(rows.size() == 18);
    for (size_t ti = 0; ti < 2; ++ti)
        for (size_t ri = 0; ri < 9; ++ri) {
            const AblationRow& r = rows[ti * 9 + ri];
            CHECK(r.label == kAblationRowLabels[ri]);
            CHECK(r.target == static_cast<int>(ti));
            CHECK(r.seeds == 1);
            CHECK(r.std_map == 0.0);
            CHECK(r.mean_map >= 0.0);
            CHECK(r.mean_map <= 1.0);
        }

    // The baseline row is design a with lambda 0; reproduce it directly.
    TrainConfig c0 = base;
    c0.seed = 1;
    c0.lambda = 0.f;
    c0.design = Design::none_a;
    const TrainOutput out = train(ds, 0, c0);
    const MetricsReport direct = evaluate(out.params, ds, make_target_split(ds, 0));
    CHECK(rows[0].mean_map == direct.map);
    CHECK(rows[0].mean_rank1 == direct.rank1);

    // "aux" and "design-a" rows share one configuration.
    CHECK(rows[1].mean_map == rows[5].mean_map);

    const std::string path = "ablation_roundtrip_test.csv";
    write_ablation_csv(path, rows);
    const auto reread = read_ablation_csv(path);
    REQUIRE(reread.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(reread[i].label == rows[i].label);
        CHECK(reread[i].target == rows[i].target);
        CHECK(reread[i].seeds == rows[i].seeds);
        CHECK(reread[i].mean_map == rows[i].mean_map);
        CHECK(reread[i].std_map == rows[i].std_map);
        CHECK(reread[i].mean_rank1 == rows[i].mean_rank1);
        CHECK(reread[i].std_rank1 == rows[i].std_rank1);
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(run_ablation(ds, base, tto, {}, {0}), std::invalid_argument);
    CHECK_THROWS_AS(run_ablation(ds, base, tto, {1}, {}), std::invalid_argument);
}

TEST_CASE("worker thread limit honors the environment cap") {
    const char* saved = std::getenv("GRADWEAVE_THREADS");
    const std::string backup = saved ? saved : "";
    setenv("GRADWEAVE_THREADS", "3", 1);
    CHECK(worker_thread_limit() == 3);
    setenv("GRADWEAVE_THREADS", "0", 1);
    CHECK(worker_thread_limit() >= 1);
    if (saved)
        setenv("GRADWEAVE_THREADS", backup.c_str(), 1);
    else
        unsetenv("GRADWEAVE_THREADS");
}

TEST_CASE("config fingerprints are stable hex strings") {
    CHECK(config_fingerprint("") == "cbf29ce484222325");
    CHECK(config_fingerprint("a") != config_fingerprint("b"));
    CHECK(config_fingerprint("abc").size() == 16);
    CHECK(config_fingerprint("abc") == config_fingerprint("abc"));
}
