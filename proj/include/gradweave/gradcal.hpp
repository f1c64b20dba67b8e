#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gradweave {

// The four calibration designs. b projects the primary gradient against the
// auxiliary one, c projects both (each against the other's original), d
// projects the auxiliary gradient against a reference primary gradient.
enum class Design { none_a, aux_referenced_b, mutual_c, primary_referenced_d };

inline const char* design_name(Design d) {
    switch (d) {
        case Design::none_a: return "a";
        case Design::aux_referenced_b: return "b";
        case Design::mutual_c: return "c";
        case Design::primary_referenced_d: return "d";
    }
    return "?";
}

namespace gc {

// Dot products and norms accumulate in double regardless of T; the conflict
// decision and projection coefficient must not wobble with summation order.
template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("gradient length mismatch: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename T>
double norm(const std::vector<T>& g) {
    double acc = 0;
    for (const T v : g) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

// Strict: a zero dot product is not a conflict.
template <typename T>
bool conflict(const std::vector<T>& g_a, const std::vector<T>& g_p) {
    return dot(g_a, g_p) < 0.0;
}

// Remove the component of g along ref when they conflict; otherwise return g
// unchanged (bit-exact, the common path must not drift).
template <typename T>
std::vector<T> project_out(const std::vector<T>& g, const std::vector<T>& ref) {
    const double d = dot(g, ref);
    if (d >= 0.0) return g;
    const double coef = d / dot(ref, ref);  // d < 0 implies ||ref|| > 0
    std::vector<T> out(g.size());
    for (size_t i = 0; i < g.size(); ++i)
        out[i] = static_cast<T>(static_cast<double>(g[i]) - coef * static_cast<double>(ref[i]));
    return out;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> apply_design(Design design, const std::vector<T>& g_p,
                                                       const std::vector<T>& g_ref_p,
                                                       const std::vector<T>& g_a) {
    switch (design) {
        case Design::none_a:
            return {g_p, g_a};
        case Design::aux_referenced_b:
            return {project_out(g_p, g_a), g_a};
        case Design::mutual_c:
            // Both projections read the original vectors.
            return {project_out(g_p, g_a), project_out(g_a, g_p)};
        case Design::primary_referenced_d:
            return {g_p, project_out(g_a, g_ref_p)};
    }
    throw std::invalid_argument("apply_design: unknown design");
}

// g_total = g_p' + lambda * g_a'. Lambda is applied after calibration.
template <typename T>
std::vector<T> combine(const std::vector<T>& g_p, const std::vector<T>& g_a, T lambda) {
    if (g_p.size() != g_a.size()) throw std::invalid_argument("combine: gradient length mismatch");
    std::vector<T> out(g_p.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = g_p[i] + lambda * g_a[i];
    return out;
}

}  // namespace gc
}  // namespace gradweave
