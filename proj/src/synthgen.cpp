#include "gradweave/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "gradweave/rng.hpp"
#include "gradweave/tensor_io.hpp"

namespace gradweave {

namespace {

constexpr float kHeadColor[3] = {0.87f, 0.72f, 0.60f};

// Seed tags; distinct streams per purpose.
constexpr uint64_t kTagRender = 1, kTagWeak = 2, kTagIdentity = 3;
constexpr uint64_t kTagCamera = 0xC0FFEE;

float clamp01(float v) { return std::min(1.f, std::max(0.f, v)); }

bool inside_figure(const FigureGeometry& fg, double px, double py) {
    const double dxh = px - fg.cx, dyh = py - fg.head_cy;
    if (dxh * dxh + dyh * dyh <= fg.head_r * fg.head_r) return true;
    const double ex = (px - fg.cx) / fg.torso_a, ey = (py - fg.torso_cy) / fg.torso_b;
    if (ex * ex + ey * ey <= 1.0) return true;
    if (py >= fg.leg_top && py < fg.leg_bottom) {
        const double lx1 = fg.cx - fg.leg_gap / 2, lx0 = lx1 - fg.leg_w;
        const double rx0 = fg.cx + fg.leg_gap / 2, rx1 = rx0 + fg.leg_w;
        if ((px >= lx0 && px < lx1) || (px >= rx0 && px < rx1)) return true;
    }
    return false;
}

}  // namespace

FigureGeometry figure_geometry(const IdentitySpec& id, double scale, double cx, double cy,
                               int height) {
    FigureGeometry fg;
    fg.cx = cx;
    fg.cy = cy;
    fg.fh = scale * 0.92 * height;
    fg.fw = id.aspect * fg.fh;
    const double top = cy - fg.fh / 2;
    fg.head_r = 0.5 * id.head_ratio * fg.fh;
    fg.head_cy = top + fg.head_r;
    fg.torso_b = 0.21 * fg.fh;  // torso band is 0.42 of the figure height
    fg.torso_a = fg.fw / 2;
    fg.torso_cy = top + id.head_ratio * fg.fh + fg.torso_b;
    fg.leg_w = 0.28 * fg.fw;
    fg.leg_gap = 0.18 * fg.fw;
    fg.leg_top = top + (id.head_ratio + 0.42) * fg.fh;
    fg.leg_bottom = top + fg.fh;
    return fg;
}

IdentitySpec make_identity(int id, uint64_t benchmark_seed) {
    Rng rng(derive_seed(benchmark_seed, kTagIdentity, static_cast<uint64_t>(id)));
    IdentitySpec spec;
    spec.id = id;
    for (auto& c : spec.torso_color) c = rng.uniform(0.15f, 0.85f);
    for (auto& c : spec.leg_color) c = rng.uniform(0.15f, 0.85f);
    spec.head_ratio = rng.uniform(0.26f, 0.34f);
    spec.aspect = rng.uniform(0.32f, 0.42f);
    return spec;
}

RenderedSample render_sample(const IdentitySpec& id, const DomainSpec& domain, int camera,
                             int height, int width, uint64_t seed) {
    if (domain.palette.empty()) throw std::invalid_argument("render: domain palette is empty");
    if (camera < 0 || camera >= domain.cameras)
        throw std::invalid_argument("render: camera id out of range");
    Rng rng(seed);

    // Figure placement. Draw order: scale, then center offsets (redrawn on
    // the rare out-of-frame jitter, centered after 8 failures).
    const double scale = rng.uniform(static_cast<double>(domain.scale_lo),
                                     static_cast<double>(domain.scale_hi));
    double cx = width / 2.0, cy = height / 2.0;
    FigureGeometry fg = figure_geometry(id, scale, cx, cy, height);
    for (int attempt = 0; attempt < 8; ++attempt) {
        const double dx = rng.next_int(-domain.jitter, domain.jitter);
        const double dy = rng.next_int(-domain.jitter, domain.jitter);
        FigureGeometry cand =
            figure_geometry(id, scale, width / 2.0 + dx, height / 2.0 + dy, height);
        if (cand.cx - cand.fw / 2 >= 0 && cand.cx + cand.fw / 2 <= width &&
            cand.cy - cand.fh / 2 >= 0 && cand.leg_bottom <= height) {
            fg = cand;
            break;
        }
    }

    RenderedSample out;
    out.image = Tensor::zeros({3, height, width});
    out.mask = Tensor::zeros({1, height, width});
    const size_t plane = static_cast<size_t>(height) * width;

    // Background: base color, clutter rectangles, then the domain luminance
    // offset. The figure is composited afterwards so lighting stays a
    // background property.
    const auto& base = domain.palette[static_cast<size_t>(
        rng.next_int(0, static_cast<int>(domain.palette.size()) - 1))];
    for (int ch = 0; ch < 3; ++ch)
        std::fill_n(out.image.ptr() + ch * plane, plane, base[static_cast<size_t>(ch)]);
    for (int i = 0; i < domain.clutter; ++i) {
        const auto& col = domain.palette[static_cast<size_t>(
            rng.next_int(0, static_cast<int>(domain.palette.size()) - 1))];
        const int x0 = rng.next_int(0, width - 1);
        const int y0 = rng.next_int(0, height - 1);
        const int rw = rng.next_int(2, std::max(2, width / 2));
        const int rh = rng.next_int(2, std::max(2, height / 2));
        for (int y = y0; y < std::min(height, y0 + rh); ++y)
            for (int x = x0; x < std::min(width, x0 + rw); ++x)
                for (int ch = 0; ch < 3; ++ch)
                    out.image.data[ch * plane + static_cast<size_t>(y) * width + x] =
                        col[static_cast<size_t>(ch)];
    }
    for (auto& v : out.image.data) v = clamp01(v + domain.luminance);

    // Per-sample lighting jitter on the identity colors.
    float torso[3], legs[3];
    for (int ch = 0; ch < 3; ++ch) torso[ch] = id.torso_color[static_cast<size_t>(ch)];
    for (int ch = 0; ch < 3; ++ch) legs[ch] = id.leg_color[static_cast<size_t>(ch)];
    for (int ch = 0; ch < 3; ++ch) torso[ch] = clamp01(torso[ch] * rng.uniform(0.8f, 1.2f));
    for (int ch = 0; ch < 3; ++ch) legs[ch] = clamp01(legs[ch] * rng.uniform(0.8f, 1.2f));

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            if (!inside_figure(fg, px, py)) continue;
            const size_t at = static_cast<size_t>(y) * width + x;
            out.mask.data[at] = 1.f;
            const float* col = legs;
            const double dxh = px - fg.cx, dyh = py - fg.head_cy;
            if (dxh * dxh + dyh * dyh <= fg.head_r * fg.head_r)
                col = kHeadColor;
            else {
                const double ex = (px - fg.cx) / fg.torso_a;
                const double ey = (py - fg.torso_cy) / fg.torso_b;
                if (ex * ex + ey * ey <= 1.0) col = torso;
            }
            for (int ch = 0; ch < 3; ++ch) out.image.data[ch * plane + at] = col[ch];
        }

    // Camera signature: a fixed color cast per (domain, camera), and a
    // horizontal mirror on odd cameras.
    Rng cam_rng(derive_seed(kTagCamera, static_cast<uint64_t>(domain.id),
                            static_cast<uint64_t>(camera)));
    float cast[3];
    for (int ch = 0; ch < 3; ++ch) cast[ch] = cam_rng.uniform(-0.08f, 0.08f);
    for (int ch = 0; ch < 3; ++ch)
        for (size_t i = 0; i < plane; ++i) {
            float& v = out.image.data[ch * plane + i];
            v = clamp01(v + cast[ch]);
        }
    if (camera % 2 == 1) {
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < height; ++y) {
                float* row = out.image.ptr() + ch * plane + static_cast<size_t>(y) * width;
                std::reverse(row, row + width);
            }
        for (int y = 0; y < height; ++y) {
            float* row = out.mask.ptr() + static_cast<size_t>(y) * width;
            std::reverse(row, row + width);
        }
    }
    return out;
}

Tensor corrupt_mask(const Tensor& mask, const NoiseSpec& noise, uint64_t seed) {
    if (mask.rank() != 3 || mask.dim(0) != 1)
        throw std::invalid_argument("corrupt_mask: mask must be [1,H,W]");
    const int h = mask.dim(1), w = mask.dim(2);
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument("corrupt_mask: extents must be multiples of 4");
    Rng rng(seed);
    std::vector<float> cur(mask.data.begin(), mask.data.end());
    std::vector<float> next(cur.size());
    auto at = [&](const std::vector<float>& m, int y, int x) -> float {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.f;
        return m[static_cast<size_t>(y) * w + x];
    };

    // 1. translation
    const int sx = rng.next_int(-noise.shift, noise.shift);
    const int sy = rng.next_int(-noise.shift, noise.shift);
    if (sx != 0 || sy != 0) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                next[static_cast<size_t>(y) * w + x] = at(cur, y - sy, x - sx);
        cur.swap(next);
    }

    // 2. dilate or erode with even odds (square structuring element)
    const bool dilate = rng.bernoulli(0.5);
    if (noise.morph_radius > 0) {
        const int r = noise.morph_radius;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float v = dilate ? 0.f : 1.f;
                for (int dy = -r; dy <= r && (dilate ? v < 0.5f : v > 0.5f); ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const float m = at(cur, y + dy, x + dx);
                        if (dilate && m > 0.5f) {
                            v = 1.f;
                            break;
                        }
                        if (!dilate && m < 0.5f) {
                            v = 0.f;
                            break;
                        }
                    }
                next[static_cast<size_t>(y) * w + x] = v;
            }
        cur.swap(next);
    }

    // 3. drop
    if (rng.bernoulli(noise.drop_prob)) std::fill(cur.begin(), cur.end(), 0.f);

    // 4. leak: a spurious foreground rectangle
    if (rng.bernoulli(noise.leak_prob)) {
        const int bw = rng.next_int(4, std::max(4, w / 3));
        const int bh = rng.next_int(4, std::max(4, h / 3));
        const int x0 = rng.next_int(0, std::max(0, w - bw));
        const int y0 = rng.next_int(0, std::max(0, h - bh));
        for (int y = y0; y < std::min(h, y0 + bh); ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x)
                cur[static_cast<size_t>(y) * w + x] = 1.f;
    }

    // 5. box blur, zero padding
    if (noise.blur_radius > 0) {
        const int r = noise.blur_radius;
        const float inv = 1.f / ((2 * r + 1) * (2 * r + 1));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float s = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) s += at(cur, y + dy, x + dx);
                next[static_cast<size_t>(y) * w + x] = s * inv;
            }
        cur.swap(next);
    }

    // 6. 4x area downsample
    const int oh = h / 4, ow = w / 4;
    Tensor out = Tensor::zeros({1, oh, ow});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            float s = 0;
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx)
                    s += cur[static_cast<size_t>(4 * y + dy) * w + (4 * x + dx)];
            out.data[static_cast<size_t>(y) * ow + x] = s / 16.f;
        }
    return out;
}

BenchmarkSpec default_benchmark_spec() {
    BenchmarkSpec spec;
    DomainSpec meadow;
    meadow.id = 0;
    meadow.name = "meadow";
    meadow.palette = {{0.31f, 0.55f, 0.22f}, {0.42f, 0.63f, 0.25f}, {0.25f, 0.44f, 0.19f},
                      {0.55f, 0.70f, 0.35f}, {0.60f, 0.75f, 0.85f}};
    meadow.clutter = 6;
    meadow.luminance = 0.f;
    meadow.scale_lo = 0.55f;
    meadow.scale_hi = 0.95f;
    meadow.jitter = 3;

    DomainSpec urban;
    urban.id = 1;
    urban.name = "urban";
    urban.palette = {{0.52f, 0.52f, 0.55f}, {0.38f, 0.40f, 0.45f}, {0.65f, 0.63f, 0.60f},
                     {0.30f, 0.33f, 0.40f}, {0.72f, 0.45f, 0.30f}};
    urban.clutter = 10;
    urban.luminance = -0.15f;
    urban.scale_lo = 0.5f;
    urban.scale_hi = 0.9f;
    urban.jitter = 4;

    DomainSpec indoor;
    indoor.id = 2;
    indoor.name = "indoor";
    indoor.palette = {{0.70f, 0.60f, 0.48f}, {0.78f, 0.72f, 0.62f}, {0.55f, 0.42f, 0.32f},
                      {0.82f, 0.80f, 0.75f}, {0.45f, 0.35f, 0.28f}};
    indoor.clutter = 4;
    indoor.luminance = 0.15f;
    indoor.scale_lo = 0.6f;
    indoor.scale_hi = 1.0f;
    indoor.jitter = 2;

    DomainSpec night;
    night.id = 3;
    night.name = "night";
    night.palette = {{0.12f, 0.14f, 0.25f}, {0.08f, 0.10f, 0.18f}, {0.20f, 0.18f, 0.32f},
                     {0.30f, 0.28f, 0.20f}, {0.15f, 0.22f, 0.30f}};
    night.clutter = 8;
    night.luminance = -0.25f;
    night.scale_lo = 0.45f;
    night.scale_hi = 0.85f;
    night.jitter = 3;

    spec.domains = {meadow, urban, indoor, night};
    return spec;
}

Dataset build_benchmark(const BenchmarkSpec& spec) {
    if (spec.domains.empty()) throw std::invalid_argument("benchmark: no domains");
    for (const auto& d : spec.domains) {
        if (d.cameras < 2) throw std::invalid_argument("benchmark: each domain needs >=2 cameras");
        if (d.palette.empty())
            throw std::invalid_argument("benchmark: each domain needs a non-empty palette");
        if (d.scale_lo <= 0.f || d.scale_hi > 1.f || d.scale_lo > d.scale_hi)
            throw std::invalid_argument("benchmark: scale range must lie in (0,1]");
    }
    if (spec.identities_per_domain <= 0 || spec.samples_per_identity <= 0)
        throw std::invalid_argument("benchmark: counts must be positive");
    if (spec.height % 4 != 0 || spec.width % 4 != 0 || spec.height <= 0 || spec.width <= 0)
        throw std::invalid_argument("benchmark: extents must be positive multiples of 4");

    const int nd = static_cast<int>(spec.domains.size());
    const int n = nd * spec.identities_per_domain * spec.samples_per_identity;
    Dataset ds;
    ds.spec = spec;
    ds.samples.reserve(static_cast<size_t>(n));
    ds.images = Tensor::zeros({n, 3, spec.height, spec.width});
    ds.masks = Tensor::zeros({n, 1, spec.height, spec.width});
    ds.weak = Tensor::zeros({n, 1, spec.height / 4, spec.width / 4});

    const size_t img_sz = static_cast<size_t>(3) * spec.height * spec.width;
    const size_t mask_sz = static_cast<size_t>(spec.height) * spec.width;
    const size_t weak_sz = mask_sz / 16;
    size_t row = 0;
    for (int di = 0; di < nd; ++di) {
        const DomainSpec& dom = spec.domains[static_cast<size_t>(di)];
        for (int ii = 0; ii < spec.identities_per_domain; ++ii) {
            const int gid = di * spec.identities_per_domain + ii;
            const IdentitySpec who = make_identity(gid, spec.seed);
            for (int s = 0; s < spec.samples_per_identity; ++s) {
                const int camera = s % dom.cameras;
                RenderedSample r = render_sample(
                    who, dom, camera, spec.height, spec.width,
                    derive_seed(spec.seed, kTagRender, static_cast<uint64_t>(di),
                                static_cast<uint64_t>(gid), static_cast<uint64_t>(s)));
                Tensor weak = corrupt_mask(
                    r.mask, spec.noise,
                    derive_seed(spec.seed, kTagWeak, static_cast<uint64_t>(di),
                                static_cast<uint64_t>(gid), static_cast<uint64_t>(s)));
                std::copy(r.image.data.begin(), r.image.data.end(),
                          ds.images.data.begin() + static_cast<long>(row * img_sz));
                std::copy(r.mask.data.begin(), r.mask.data.end(),
                          ds.masks.data.begin() + static_cast<long>(row * mask_sz));
                std::copy(weak.data.begin(), weak.data.end(),
                          ds.weak.data.begin() + static_cast<long>(row * weak_sz));
                ds.samples.push_back({gid, camera, dom.id});
                ++row;
            }
        }
    }
    return ds;
}

nlohmann::json benchmark_spec_to_json(const BenchmarkSpec& spec) {
    nlohmann::json domains = nlohmann::json::array();
    for (const auto& d : spec.domains) {
        nlohmann::json palette = nlohmann::json::array();
        for (const auto& c : d.palette) palette.push_back({c[0], c[1], c[2]});
        domains.push_back({{"id", d.id},
                           {"name", d.name},
                           {"palette", palette},
                           {"clutter", d.clutter},
                           {"luminance", d.luminance},
                           {"scale", {d.scale_lo, d.scale_hi}},
                           {"jitter", d.jitter},
                           {"cameras", d.cameras}});
    }
    return {{"domains", domains},
            {"identities_per_domain", spec.identities_per_domain},
            {"samples_per_identity", spec.samples_per_identity},
            {"height", spec.height},
            {"width", spec.width},
            {"noise",
             {{"morph_radius", spec.noise.morph_radius},
              {"shift", spec.noise.shift},
              {"drop_prob", spec.noise.drop_prob},
              {"leak_prob", spec.noise.leak_prob},
              {"blur_radius", spec.noise.blur_radius}}},
            {"seed", spec.seed}};
}

BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j) {
    BenchmarkSpec spec;
    spec.domains.clear();
    for (const auto& dj : j.at("domains")) {
        DomainSpec d;
        d.id = dj.at("id").get<int>();
        d.name = dj.at("name").get<std::string>();
        for (const auto& cj : dj.at("palette"))
            d.palette.push_back({cj.at(0).get<float>(), cj.at(1).get<float>(), cj.at(2).get<float>()});
        d.clutter = dj.at("clutter").get<int>();
        d.luminance = dj.at("luminance").get<float>();
        d.scale_lo = dj.at("scale").at(0).get<float>();
        d.scale_hi = dj.at("scale").at(1).get<float>();
        d.jitter = dj.at("jitter").get<int>();
        d.cameras = dj.at("cameras").get<int>();
        spec.domains.push_back(std::move(d));
    }
    spec.identities_per_domain = j.at("identities_per_domain").get<int>();
    spec.samples_per_identity = j.at("samples_per_identity").get<int>();
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    const auto& nj = j.at("noise");
    spec.noise.morph_radius = nj.at("morph_radius").get<int>();
    spec.noise.shift = nj.at("shift").get<int>();
    spec.noise.drop_prob = nj.at("drop_prob").get<float>();
    spec.noise.leak_prob = nj.at("leak_prob").get<float>();
    spec.noise.blur_radius = nj.at("blur_radius").get<int>();
    spec.seed = j.at("seed").get<uint64_t>();
    return spec;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    const int nd = static_cast<int>(ds.spec.domains.size());
    const int per_domain = ds.spec.identities_per_domain * ds.spec.samples_per_identity;
    nlohmann::json files = nlohmann::json::array();
    for (int di = 0; di < nd; ++di) {
        const std::string fname = "domain_" + std::to_string(di) + ".gwt";
        const int r0 = di * per_domain;
        auto slice = [&](const Tensor& t) {
            std::vector<int> shape = t.shape;
            shape[0] = per_domain;
            const size_t sz = t.numel() / static_cast<size_t>(t.dim(0));
            Tensor out(shape, std::vector<float>(
                                  t.data.begin() + static_cast<long>(r0 * sz),
                                  t.data.begin() + static_cast<long>((r0 + per_domain) * sz)));
            return out;
        };
        write_tensor_file(dir + "/" + fname, {slice(ds.images), slice(ds.masks), slice(ds.weak)});
        files.push_back(fname);
    }
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : ds.samples)
        samples.push_back({{"identity", s.identity}, {"camera", s.camera}, {"domain", s.domain}});
    nlohmann::json manifest = {{"format", "gw-benchmark"},
                               {"version", 1},
                               {"spec", benchmark_spec_to_json(ds.spec)},
                               {"files", files},
                               {"records", {"images", "masks", "weak"}},
                               {"samples", samples}};
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw std::runtime_error("save_dataset: cannot write " + dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("load_dataset: cannot open " + dir + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(is);
    if (manifest.at("format").get<std::string>() != "gw-benchmark")
        throw std::runtime_error("load_dataset: not a benchmark directory");
    if (manifest.at("version").get<int>() != 1)
        throw std::runtime_error("load_dataset: unsupported version");

    Dataset ds;
    ds.spec = benchmark_spec_from_json(manifest.at("spec"));
    for (const auto& sj : manifest.at("samples"))
        ds.samples.push_back({sj.at("identity").get<int>(), sj.at("camera").get<int>(),
                              sj.at("domain").get<int>()});

    const int nd = static_cast<int>(ds.spec.domains.size());
    const int per_domain = ds.spec.identities_per_domain * ds.spec.samples_per_identity;
    const int n = nd * per_domain;
    if (static_cast<int>(ds.samples.size()) != n)
        throw std::runtime_error("load_dataset: sample index does not match the spec counts");

    ds.images = Tensor::zeros({n, 3, ds.spec.height, ds.spec.width});
    ds.masks = Tensor::zeros({n, 1, ds.spec.height, ds.spec.width});
    ds.weak = Tensor::zeros({n, 1, ds.spec.height / 4, ds.spec.width / 4});
    const auto& files = manifest.at("files");
    if (static_cast<int>(files.size()) != nd)
        throw std::runtime_error("load_dataset: expected one tensor file per domain");
    for (int di = 0; di < nd; ++di) {
        auto records = read_tensor_file(dir + "/" + files.at(static_cast<size_t>(di)).get<std::string>());
        if (records.size() != 3)
            throw std::runtime_error("load_dataset: expected 3 records per domain file");
        Tensor* dst[3] = {&ds.images, &ds.masks, &ds.weak};
        for (int k = 0; k < 3; ++k) {
            Tensor& whole = *dst[k];
            const Tensor& rec = records[static_cast<size_t>(k)];
            std::vector<int> want = whole.shape;
            want[0] = per_domain;
            if (rec.shape != want)
                throw std::runtime_error("load_dataset: record shape mismatch in domain file");
            const size_t sz = rec.numel() / static_cast<size_t>(per_domain);
            std::copy(rec.data.begin(), rec.data.end(),
                      whole.data.begin() + static_cast<long>(di * per_domain * sz));
        }
    }
    return ds;
}

}  // namespace gradweave
