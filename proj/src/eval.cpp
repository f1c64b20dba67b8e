#include "gradweave/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace gradweave {

RetrievalSplit make_target_split(const Dataset& ds, int target_domain) {
    if (target_domain < 0 || target_domain >= static_cast<int>(ds.spec.domains.size()))
        throw std::invalid_argument("retrieval split: target domain out of range");
    std::vector<int> rows;
    for (size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].domain == target_domain) rows.push_back(static_cast<int>(i));
    if (rows.empty()) throw std::invalid_argument("retrieval split: target domain has no samples");

    std::map<int, std::set<int>> cameras;
    for (int r : rows) {
        const SampleInfo& s = ds.samples[static_cast<size_t>(r)];
        cameras[s.identity].insert(s.camera);
    }
    for (const auto& [identity, cams] : cameras)
        if (cams.size() < 2)
            throw std::invalid_argument("retrieval split: identity " + std::to_string(identity) +
                                        " appears under a single camera");
    return {rows, rows};
}

double average_precision(const std::vector<char>& relevance) {
    int hits = 0;
    double sum = 0;
    for (size_t k = 0; k < relevance.size(); ++k) {
        if (!relevance[k]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return hits ? sum / hits : 0.0;
}

Tensor extract_embeddings(const ModelParams& params, const Tensor& images,
                          const std::vector<int>& rows) {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw std::invalid_argument("extract_embeddings: images must be [N,3,H,W]");
    for (int r : rows)
        if (r < 0 || r >= images.dim(0))
            throw std::invalid_argument("extract_embeddings: row index out of range");

    constexpr int kChunk = 32;
    const int h = images.dim(2), w = images.dim(3);
    const size_t img_sz = static_cast<size_t>(3) * h * w;
    Tensor out;
    for (size_t start = 0; start < rows.size(); start += kChunk) {
        const int n = static_cast<int>(std::min<size_t>(kChunk, rows.size() - start));
        Tensor sub = Tensor::zeros({n, 3, h, w});
        for (int i = 0; i < n; ++i)
            std::copy_n(
                images.data.begin() + static_cast<long>(rows[start + static_cast<size_t>(i)]) *
                                          static_cast<long>(img_sz),
                img_sz, sub.data.begin() + static_cast<long>(i) * static_cast<long>(img_sz));
        ForwardPass fp = build_forward(params, sub, Heads::primary_only);
        const Tensor& emb = fp.graph.value(fp.embeddings);
        if (out.numel() == 0) out = Tensor::zeros({static_cast<int>(rows.size()), emb.dim(1)});
        std::copy(emb.data.begin(), emb.data.end(),
                  out.data.begin() + static_cast<long>(start) * emb.dim(1));
    }
    if (out.numel() == 0) out = Tensor::zeros({0, 0});
    return out;
}

MetricsReport evaluate_embeddings(const std::vector<SampleInfo>& samples,
                                  const RetrievalSplit& split, const Tensor& query_emb,
                                  const Tensor& gallery_emb) {
    const size_t nq = split.query_rows.size(), ng = split.gallery_rows.size();
    if (query_emb.rank() != 2 || static_cast<size_t>(query_emb.dim(0)) != nq)
        throw std::invalid_argument("evaluate: query embedding count mismatch");
    if (gallery_emb.rank() != 2 || static_cast<size_t>(gallery_emb.dim(0)) != ng)
        throw std::invalid_argument("evaluate: gallery embedding count mismatch");
    if (query_emb.dim(1) != gallery_emb.dim(1))
        throw std::invalid_argument("evaluate: embedding dimension mismatch");
    for (int r : split.query_rows)
        if (r < 0 || r >= static_cast<int>(samples.size()))
            throw std::invalid_argument("evaluate: query row out of range");
    for (int r : split.gallery_rows)
        if (r < 0 || r >= static_cast<int>(samples.size()))
            throw std::invalid_argument("evaluate: gallery row out of range");

    const int d = query_emb.dim(1);
    MetricsReport report;
    std::map<int, DomainMetrics> by_domain;

    std::vector<std::pair<double, int>> order;
    std::vector<char> rel;
    for (size_t qi = 0; qi < nq; ++qi) {
        const SampleInfo& q = samples[static_cast<size_t>(split.query_rows[qi])];
        const float* qv = query_emb.ptr() + static_cast<size_t>(qi) * d;

        order.clear();
        int positives = 0;
        for (size_t gi = 0; gi < ng; ++gi) {
            const SampleInfo& g = samples[static_cast<size_t>(split.gallery_rows[gi])];
            if (g.identity == q.identity && g.camera == q.camera) continue;
            const float* gv = gallery_emb.ptr() + gi * static_cast<size_t>(d);
            double dist = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = static_cast<double>(qv[k]) - static_cast<double>(gv[k]);
                dist += diff * diff;
            }
            order.emplace_back(dist, static_cast<int>(gi));
            if (g.identity == q.identity) ++positives;
        }

        DomainMetrics& dm = by_domain.try_emplace(q.domain, DomainMetrics{q.domain}).first->second;
        if (positives == 0) {
            ++report.excluded;
            ++dm.excluded;
            continue;
        }
        std::sort(order.begin(), order.end());
        rel.clear();
        for (const auto& [dist, gi] : order) {
            (void)dist;
            rel.push_back(
                samples[static_cast<size_t>(split.gallery_rows[static_cast<size_t>(gi)])]
                        .identity == q.identity
                    ? 1
                    : 0);
        }
        const double ap = average_precision(rel);
        const double r1 = rel.front() ? 1.0 : 0.0;
        report.map += ap;
        report.rank1 += r1;
        ++report.evaluated;
        dm.map += ap;
        dm.rank1 += r1;
        ++dm.evaluated;
    }

    if (report.evaluated > 0) {
        report.map /= report.evaluated;
        report.rank1 /= report.evaluated;
    }
    for (auto& [domain, dm] : by_domain) {
        (void)domain;
        if (dm.evaluated > 0) {
            dm.map /= dm.evaluated;
            dm.rank1 /= dm.evaluated;
        }
        report.per_domain.push_back(dm);
    }
    return report;
}

MetricsReport evaluate(const ModelParams& params, const Dataset& ds, const RetrievalSplit& split) {
    const Tensor qe = extract_embeddings(params, ds.images, split.query_rows);
    if (split.query_rows == split.gallery_rows)
        return evaluate_embeddings(ds.samples, split, qe, qe);
    const Tensor ge = extract_embeddings(params, ds.images, split.gallery_rows);
    return evaluate_embeddings(ds.samples, split, qe, ge);
}

MetricsReport tto_evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& ds,
                           const RetrievalSplit& split, const TTOConfig& tto) {
    tto.validate();
    if (split.query_rows != split.gallery_rows)
        throw std::invalid_argument(
            "tto evaluation adapts one unlabeled stream; query and gallery must coincide");
    const std::vector<int>& rows = split.query_rows;
    const size_t img_sz = static_cast<size_t>(3) * cfg.height * cfg.width;
    const size_t weak_sz = static_cast<size_t>(cfg.map_height()) * cfg.map_width();

    ModelParams work = params;
    Tensor emb = Tensor::zeros({static_cast<int>(rows.size()), cfg.embed_dim});
    std::vector<int> iota;
    for (size_t start = 0; start < rows.size(); start += static_cast<size_t>(tto.batch_size)) {
        const int n =
            static_cast<int>(std::min<size_t>(tto.batch_size, rows.size() - start));
        Tensor bimg = Tensor::zeros({n, 3, cfg.height, cfg.width});
        Tensor bweak = Tensor::zeros({n, 1, cfg.map_height(), cfg.map_width()});
        for (int i = 0; i < n; ++i) {
            const long row = rows[start + static_cast<size_t>(i)];
            std::copy_n(ds.images.data.begin() + row * static_cast<long>(img_sz), img_sz,
                        bimg.data.begin() + static_cast<long>(i) * static_cast<long>(img_sz));
            std::copy_n(ds.weak.data.begin() + row * static_cast<long>(weak_sz), weak_sz,
                        bweak.data.begin() + static_cast<long>(i) * static_cast<long>(weak_sz));
        }
        if (tto.persistence == TTOPersistence::reset_per_batch) work = params;
        deploy_optimize(work, cfg, bimg, bweak, tto.steps, tto.lr);
        iota.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) iota[static_cast<size_t>(i)] = i;
        const Tensor be = extract_embeddings(work, bimg, iota);
        std::copy(be.data.begin(), be.data.end(),
                  emb.data.begin() + static_cast<long>(start) * cfg.embed_dim);
    }
    return evaluate_embeddings(ds.samples, split, emb, emb);
}

std::vector<MetricsReport> run_tto_sweep(const ModelParams& params, const ModelConfig& cfg,
                                         const Dataset& ds, int target, int max_steps,
                                         const TTOConfig& tto) {
    if (max_steps < 0) throw std::invalid_argument("tto sweep: max_steps must be >= 0");
    const RetrievalSplit split = make_target_split(ds, target);
    std::vector<MetricsReport> out;
    out.reserve(static_cast<size_t>(max_steps) + 1);
    for (int k = 0; k <= max_steps; ++k) {
        TTOConfig t = tto;
        t.steps = k;
        out.push_back(tto_evaluate(params, cfg, ds, split, t));
    }
    return out;
}

namespace {

// Per-(target, seed) metrics for the 9 ablation rows, in label order.
std::array<std::pair<double, double>, 9> ablation_cell(const Dataset& ds, int target,
                                                       const TrainConfig& base, uint64_t seed,
                                                       const TTOConfig& tto,
                                                       const ModelConfig& arch) {
    TrainConfig cfg = base;
    cfg.seed = seed;

    TrainConfig c_baseline = cfg;
    c_baseline.lambda = 0.f;
    c_baseline.design = Design::none_a;
    TrainConfig c_a = cfg;
    c_a.design = Design::none_a;
    TrainConfig c_b = cfg;
    c_b.design = Design::aux_referenced_b;
    TrainConfig c_c = cfg;
    c_c.design = Design::mutual_c;
    TrainConfig c_d = cfg;
    c_d.design = Design::primary_referenced_d;

    const TrainOutput baseline = train(ds, target, c_baseline, arch);
    const TrainOutput a = train(ds, target, c_a, arch);
    const TrainOutput b = train(ds, target, c_b, arch);
    const TrainOutput c = train(ds, target, c_c, arch);
    const TrainOutput d = train(ds, target, c_d, arch);

    const RetrievalSplit split = make_target_split(ds, target);
    const MetricsReport r_baseline = evaluate(baseline.params, ds, split);
    const MetricsReport r_a = evaluate(a.params, ds, split);
    const MetricsReport r_b = evaluate(b.params, ds, split);
    const MetricsReport r_c = evaluate(c.params, ds, split);
    const MetricsReport r_d = evaluate(d.params, ds, split);
    const MetricsReport r_a_tto = tto_evaluate(a.params, a.config, ds, split, tto);
    const MetricsReport r_d_tto = tto_evaluate(d.params, d.config, ds, split, tto);

    std::array<std::pair<double, double>, 9> out{{{r_baseline.map, r_baseline.rank1},
                                                  {r_a.map, r_a.rank1},
                                                  {r_a_tto.map, r_a_tto.rank1},
                                                  {r_d.map, r_d.rank1},
                                                  {r_d_tto.map, r_d_tto.rank1},
                                                  {r_a.map, r_a.rank1},
                                                  {r_b.map, r_b.rank1},
                                                  {r_c.map, r_c.rank1},
                                                  {r_d.map, r_d.rank1}}};
    return out;
}

}  // namespace

int worker_thread_limit() {
    if (const char* env = std::getenv("GRADWEAVE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const TTOConfig& tto, const std::vector<uint64_t>& seeds,
                                      const std::vector<int>& targets, const ModelConfig& arch,
                                      const std::function<void(int, int)>& progress) {
    base.validate();
    tto.validate();
    if (seeds.empty()) throw std::invalid_argument("ablation: need at least one seed");
    if (targets.empty()) throw std::invalid_argument("ablation: need at least one target domain");

    struct Job {
        int target;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int t : targets)
        for (uint64_t s : seeds) jobs.push_back({t, s});

    std::vector<std::array<std::pair<double, double>, 9>> cells(jobs.size());
    std::atomic<size_t> next{0};
    std::atomic<int> done{0};
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const size_t j = next.fetch_add(1);
            if (j >= jobs.size() || failed.load()) return;
            try {
                cells[j] = ablation_cell(ds, jobs[j].target, base, jobs[j].seed, tto, arch);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mu);
                failed.store(true);
                if (error.empty()) error = e.what();
                return;
            }
            if (progress) {
                std::lock_guard<std::mutex> lock(error_mu);
                progress(done.fetch_add(1) + 1, static_cast<int>(jobs.size()));
            }
        }
    };
    const int nthreads =
        std::min<int>(worker_thread_limit(), static_cast<int>(jobs.size()));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw std::runtime_error("ablation: " + error);

    std::vector<AblationRow> rows;
    const int ns = static_cast<int>(seeds.size());
    for (size_t ti = 0; ti < targets.size(); ++ti) {
        for (size_t ri = 0; ri < kAblationRowLabels.size(); ++ri) {
            AblationRow row;
            row.label = kAblationRowLabels[ri];
            row.target = targets[ti];
            row.seeds = ns;
            std::vector<double> maps, r1s;
            for (int si = 0; si < ns; ++si) {
                const auto& cell = cells[ti * seeds.size() + static_cast<size_t>(si)][ri];
                maps.push_back(cell.first);
                r1s.push_back(cell.second);
            }
            auto mean = [](const std::vector<double>& v) {
                double s = 0;
                for (double x : v) s += x;
                return s / static_cast<double>(v.size());
            };
            auto sample_std = [&](const std::vector<double>& v, double mu) {
                if (v.size() < 2) return 0.0;
                double s = 0;
                for (double x : v) s += (x - mu) * (x - mu);
                return std::sqrt(s / static_cast<double>(v.size() - 1));
            };
            row.mean_map = mean(maps);
            row.std_map = sample_std(maps, row.mean_map);
            row.mean_rank1 = mean(r1s);
            row.std_rank1 = sample_std(r1s, row.mean_rank1);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ablation: cannot write " + path);
    os << "label,target,seeds,mean_map,std_map,mean_rank1,std_rank1\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", r.mean_map, r.std_map,
                      r.mean_rank1, r.std_rank1);
        os << r.label << ',' << r.target << ',' << r.seeds << ',' << buf << '\n';
    }
}

std::vector<AblationRow> read_ablation_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("ablation: cannot read " + path);
    std::string line;
    if (!std::getline(is, line) || line != "label,target,seeds,mean_map,std_map,mean_rank1,std_rank1")
        throw std::runtime_error("ablation: unrecognized csv header in " + path);
    std::vector<AblationRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7) throw std::runtime_error("ablation: malformed csv row in " + path);
        AblationRow r;
        r.label = cells[0];
        r.target = std::stoi(cells[1]);
        r.seeds = std::stoi(cells[2]);
        r.mean_map = std::stod(cells[3]);
        r.std_map = std::stod(cells[4]);
        r.mean_rank1 = std::stod(cells[5]);
        r.std_rank1 = std::stod(cells[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json per_domain = nlohmann::json::array();
    for (const auto& dm : report.per_domain)
        per_domain.push_back({{"domain", dm.domain},
                              {"map", dm.map},
                              {"rank1", dm.rank1},
                              {"evaluated", dm.evaluated},
                              {"excluded", dm.excluded}});
    return {{"map", report.map},
            {"rank1", report.rank1},
            {"evaluated", report.evaluated},
            {"excluded", report.excluded},
            {"per_domain", per_domain},
            {"conflict_rate_per_epoch", report.conflict_rate_per_epoch},
            {"config_fingerprint", report.config_fingerprint}};
}

std::string config_fingerprint(const std::string& canonical) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace gradweave
