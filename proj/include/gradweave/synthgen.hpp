#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradweave/tensor.hpp"

namespace gradweave {

// One recording environment. Identity appearance is deliberately kept out of
// these knobs; domains differ only in background statistics, lighting,
// figure scale and framing.
struct DomainSpec {
    int id = 0;
    std::string name;
    std::vector<std::array<float, 3>> palette;  // background base + clutter colors
    int clutter = 0;                            // random rectangles per image
    float luminance = 0.f;                      // background offset in [-0.3, 0.3]
    float scale_lo = 0.6f, scale_hi = 0.95f;    // figure height as fraction of max
    int jitter = 3;                             // max center offset, pixels
    int cameras = 4;
};

// One person. Colors and proportions are the only identity signal; they are
// the same in every domain.
struct IdentitySpec {
    int id = 0;
    std::array<float, 3> torso_color{};
    std::array<float, 3> leg_color{};
    float head_ratio = 0.3f;  // head height as fraction of figure height
    float aspect = 0.36f;     // figure width / figure height
};

// Weak-label corruptor settings. Applied to the ground-truth mask in order:
// translate, dilate-or-erode (even odds), drop, leak, blur, then 4x area
// downsample. All-zero settings reproduce the downsampled ground truth.
struct NoiseSpec {
    int morph_radius = 2;   // square dilation/erosion radius
    int shift = 2;          // max |translation| per axis, pixels
    float drop_prob = 0.05f;  // replace the whole mask with zeros
    float leak_prob = 0.1f;   // add a background blob
    int blur_radius = 1;      // box blur radius (0 = off)
};

struct BenchmarkSpec {
    std::vector<DomainSpec> domains;
    int identities_per_domain = 25;
    int samples_per_identity = 8;
    int height = 64, width = 32;
    NoiseSpec noise;
    uint64_t seed = 7;
};

// Four domains with distinct palettes, clutter densities and lighting;
// 4 x 25 x 8 = 800 samples at the default counts.
BenchmarkSpec default_benchmark_spec();

// Continuous figure geometry, in image coordinates (x right, y down). A
// pixel (ix, iy) is foreground iff its center (ix+0.5, iy+0.5) lies inside
// the head disc or torso ellipse (closed) or a leg rectangle (half-open in
// both axes). Head, torso and legs stack without overlap.
struct FigureGeometry {
    double cx, cy;                   // figure center
    double fh, fw;                   // figure height/width
    double head_r, head_cy;          // disc radius and center y
    double torso_a, torso_b, torso_cy;  // ellipse semi-axes and center y
    double leg_w, leg_gap;           // per-leg width, gap between legs
    double leg_top, leg_bottom;      // legs span y in [leg_top, leg_bottom)
};

FigureGeometry figure_geometry(const IdentitySpec& id, double scale, double cx, double cy,
                               int height);

// Deterministic identity appearance derived from the benchmark seed.
IdentitySpec make_identity(int id, uint64_t benchmark_seed);

struct RenderedSample {
    Tensor image;  // [3,H,W] in [0,1]
    Tensor mask;   // [1,H,W] in {0,1}
};

// Background (base color, clutter, domain luminance) composited with the
// identity figure, then a per-camera color cast; odd cameras mirror the
// frame. The mask is the exact figure coverage.
RenderedSample render_sample(const IdentitySpec& id, const DomainSpec& domain, int camera,
                             int height, int width, uint64_t seed);

// Ground truth [1,H,W] -> weak label [1,H/4,W/4] per NoiseSpec.
Tensor corrupt_mask(const Tensor& mask, const NoiseSpec& noise, uint64_t seed);

struct SampleInfo {
    int identity, camera, domain;
};

struct Dataset {
    BenchmarkSpec spec;
    std::vector<SampleInfo> samples;
    Tensor images;  // [N,3,H,W]
    Tensor masks;   // [N,1,H,W]
    Tensor weak;    // [N,1,H/4,W/4]
};

// Samples ordered by (domain, identity, sample index); identity ids are
// globally unique so per-domain identity sets are disjoint by construction.
Dataset build_benchmark(const BenchmarkSpec& spec);

nlohmann::json benchmark_spec_to_json(const BenchmarkSpec& spec);
BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j);

// Directory layout: manifest.json (spec + sample index) and one GWT1 file
// per domain holding three records: images, masks, weak labels.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace gradweave
