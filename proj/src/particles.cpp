#include "microseg/particles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace microseg {

size_t Mask::count() const {
    return static_cast<size_t>(std::count(on.begin(), on.end(), uint8_t{1}));
}

EmpiricalDistribution EmpiricalDistribution::from(std::vector<double> values,
                                                  std::string units) {
    EmpiricalDistribution d;
    d.samples = std::move(values);
    std::sort(d.samples.begin(), d.samples.end());
    d.units = std::move(units);
    return d;
}

double EmpiricalDistribution::ecdf(double x) const {
    auto it = std::upper_bound(samples.begin(), samples.end(), x);
    return samples.empty() ? 0.0
                           : static_cast<double>(it - samples.begin()) / samples.size();
}

double EmpiricalDistribution::quantile(double q) const {
    if (samples.empty()) throw ImageError("quantile of empty distribution");
    const double pos = q * (samples.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, samples.size() - 1);
    const double frac = pos - lo;
    return samples[lo] * (1 - frac) + samples[hi] * frac;
}

OtsuResult otsu_threshold(const Micrograph& m) {
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : m.pixels) {
        int b = std::clamp(static_cast<int>(v * (kBins - 1) + 0.5), 0, kBins - 1);
        hist[b] += 1.0;
    }

    const double total = static_cast<double>(m.size());
    double mu_total = 0.0;
    for (int b = 0; b < kBins; ++b) mu_total += b * hist[b];
    mu_total /= total;

    // between-class variance w0*w1*(mu0-mu1)^2, swept over thresholds t:
    // background = bins <= t, foreground = bins > t
    double best = -1.0;
    int best_t = -1;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < kBins - 1; ++t) {
        w0 += hist[t];
        sum0 += t * hist[t];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (mu_total * total - sum0) / w1;
        const double sigma_b = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (sigma_b > best) {  // strict: ties keep the smallest threshold
            best = sigma_b;
            best_t = t;
        }
    }
    if (best_t < 0) throw ImageError("otsu: constant image has no threshold");

    OtsuResult res;
    res.threshold = best_t / double(kBins - 1);
    res.mask = Mask(m.height, m.width);
    for (size_t i = 0; i < m.size(); ++i)
        res.mask.on[i] = m.pixels[i] > res.threshold ? 1 : 0;
    return res;
}

ParticleSet connected_components(const Mask& mask, int connectivity,
                                 std::optional<double> um_per_px) {
    if (connectivity != 4 && connectivity != 8)
        throw ImageError("connectivity must be 4 or 8");

    const int h = mask.height, w = mask.width;
    ParticleSet ps;
    ps.height = h;
    ps.width = w;
    ps.um_per_px = um_per_px;
    ps.label_grid.assign(static_cast<size_t>(h) * w, 0);

    static constexpr int dr8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
    static constexpr int dc8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const size_t idx = static_cast<size_t>(r) * w + c;
            if (!mask.on[idx] || ps.label_grid[idx] != 0) continue;

            const int32_t id = static_cast<int32_t>(ps.particles.size()) + 1;
            Particle p;
            p.min_r = p.max_r = r;
            p.min_c = p.max_c = c;
            double sum_r = 0, sum_c = 0;

            stack.clear();
            stack.emplace_back(r, c);
            ps.label_grid[idx] = id;
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                p.area_px++;
                sum_r += cr;
                sum_c += cc;
                p.min_r = std::min(p.min_r, cr);
                p.max_r = std::max(p.max_r, cr);
                p.min_c = std::min(p.min_c, cc);
                p.max_c = std::max(p.max_c, cc);
                for (int k = 0; k < 8; ++k) {
                    if (connectivity == 4 && (dr8[k] != 0 && dc8[k] != 0)) continue;
                    const int nr = cr + dr8[k], nc = cc + dc8[k];
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const size_t nidx = static_cast<size_t>(nr) * w + nc;
                    if (mask.on[nidx] && ps.label_grid[nidx] == 0) {
                        ps.label_grid[nidx] = id;
                        stack.emplace_back(nr, nc);
                    }
                }
            }
            p.centroid_r = sum_r / p.area_px;
            p.centroid_c = sum_c / p.area_px;
            p.touches_border =
                p.min_r == 0 || p.min_c == 0 || p.max_r == h - 1 || p.max_c == w - 1;
            ps.particles.push_back(p);
        }
    }
    return ps;
}

ParticleSet remove_border_particles(const ParticleSet& ps) {
    ParticleSet out;
    out.height = ps.height;
    out.width = ps.width;
    out.um_per_px = ps.um_per_px;
    out.label_grid.assign(ps.label_grid.size(), 0);

    std::vector<int32_t> remap(ps.particles.size() + 1, 0);
    for (size_t i = 0; i < ps.particles.size(); ++i) {
        if (ps.particles[i].touches_border) continue;
        out.particles.push_back(ps.particles[i]);
        remap[i + 1] = static_cast<int32_t>(out.particles.size());
    }
    for (size_t i = 0; i < ps.label_grid.size(); ++i)
        out.label_grid[i] = remap[ps.label_grid[i]];
    return out;
}

EmpiricalDistribution particle_size_distribution(const ParticleSet& ps,
                                                 long min_area_px) {
    std::vector<double> radii;
    for (const auto& p : ps.particles) {
        if (p.area_px < min_area_px) continue;
        double r = std::sqrt(p.area_px / M_PI);
        if (ps.um_per_px) r *= *ps.um_per_px;
        radii.push_back(r);
    }
    return EmpiricalDistribution::from(std::move(radii), ps.um_per_px ? "um" : "px");
}

KsResult ks_two_sample(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                       double significance) {
    const size_t n = a.samples.size(), m = b.samples.size();
    if (n == 0 || m == 0) throw ImageError("ks_two_sample: empty sample");

    // walk the merged order, tracking the ECDF gap
    double d = 0.0;
    size_t i = 0, j = 0;
    while (i < n && j < m) {
        const double x = std::min(a.samples[i], b.samples[j]);
        while (i < n && a.samples[i] <= x) ++i;
        while (j < m && b.samples[j] <= x) ++j;
        d = std::max(d, std::abs(double(i) / n - double(j) / m));
    }
    d = std::max(d, std::abs(1.0 - double(j) / m));
    d = std::max(d, std::abs(double(i) / n - 1.0));

    KsResult res;
    res.d = d;
    const double c = std::sqrt(-0.5 * std::log(significance / 2.0));
    res.critical = c * std::sqrt(double(n + m) / (double(n) * double(m)));
    res.reject = d > res.critical;
    return res;
}

double ks_consistency_score(
    const std::vector<std::pair<EmpiricalDistribution, EmpiricalDistribution>>& pairs,
    double significance) {
    if (pairs.empty()) throw ImageError("ks_consistency_score: no pairs");
    size_t consistent = 0;
    for (const auto& [pred, truth] : pairs)
        if (!ks_two_sample(pred, truth, significance).reject) ++consistent;
    return static_cast<double>(consistent) / pairs.size();
}

LabelMap fuse_predictions(const LabelMap& particle_map, const LabelMap& micro_map) {
    if (particle_map.height != micro_map.height || particle_map.width != micro_map.width)
        throw ImageError("fuse_predictions: dimension mismatch");
    LabelMap out(particle_map.height, particle_map.width, 2, kParticleMatrix);
    for (size_t i = 0; i < out.size(); ++i) {
        if (particle_map.labels[i] == kParticleSpheroidite &&
            micro_map.labels[i] == kSpheroidite)
            out.labels[i] = kParticleSpheroidite;
    }
    return out;
}

Mask class_mask(const LabelMap& map, uint8_t cls) {
    Mask m(map.height, map.width);
    for (size_t i = 0; i < map.size(); ++i) m.on[i] = map.labels[i] == cls ? 1 : 0;
    return m;
}

}  // namespace microseg
