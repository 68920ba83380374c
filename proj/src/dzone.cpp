#include "microseg/dzone.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace microseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared-distance lower envelope (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, int n, double* out, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (f[v[0]] == kInf) {
            v[0] = q;
            continue;
        }
        double s;
        while (true) {
            s = ((f[q] + q * double(q)) - (f[v[k]] + v[k] * double(v[k]))) /
                (2.0 * q - 2.0 * v[k]);
            if (s <= z[k])
                --k;
            else
                break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        if (f[v[0]] == kInf) {
            out[q] = kInf;
            continue;
        }
        while (z[k + 1] < q) ++k;
        const double dq = q - double(v[k]);
        out[q] = dq * dq + f[v[k]];
    }
}

DistanceMap edt_impl(const Mask& target, bool parallel) {
    const int h = target.height, w = target.width;
    if (target.count() == 0) throw ImageError("distance_transform: empty target mask");

    std::vector<double> sq(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < sq.size(); ++i) sq[i] = target.on[i] ? 0.0 : kInf;

    // columns
#pragma omp parallel if (parallel)
    {
        std::vector<double> f(std::max(h, w)), out(std::max(h, w)), z(std::max(h, w) + 1);
        std::vector<int> v(std::max(h, w));
#pragma omp for
        for (int c = 0; c < w; ++c) {
            for (int r = 0; r < h; ++r) f[r] = sq[static_cast<size_t>(r) * w + c];
            edt_1d(f.data(), h, out.data(), v.data(), z.data());
            for (int r = 0; r < h; ++r) sq[static_cast<size_t>(r) * w + c] = out[r];
        }
#pragma omp for
        for (int r = 0; r < h; ++r) {
            double* row = &sq[static_cast<size_t>(r) * w];
            std::copy(row, row + w, f.data());
            edt_1d(f.data(), w, out.data(), v.data(), z.data());
            std::copy(out.data(), out.data() + w, row);
        }
    }

    DistanceMap dm;
    dm.height = h;
    dm.width = w;
    dm.d.resize(sq.size());
    for (size_t i = 0; i < sq.size(); ++i) dm.d[i] = std::sqrt(sq[i]);
    return dm;
}

}  // namespace

DistanceMap distance_transform(const Mask& target) { return edt_impl(target, true); }

namespace serial {
DistanceMap distance_transform(const Mask& target) {
    const int h = target.height, w = target.width;
    if (target.count() == 0) throw ImageError("distance_transform: empty target mask");
    // brute-force all-pairs minimum
    std::vector<std::pair<int, int>> targets;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (target.at(r, c)) targets.emplace_back(r, c);

    DistanceMap dm;
    dm.height = h;
    dm.width = w;
    dm.d.assign(static_cast<size_t>(h) * w, 0.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double best = kInf;
            for (auto [tr, tc] : targets) {
                const double dr = r - tr, dc = c - tc;
                best = std::min(best, dr * dr + dc * dc);
            }
            dm.d[static_cast<size_t>(r) * w + c] = std::sqrt(best);
        }
    }
    return dm;
}
}  // namespace serial

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius) offs.emplace_back(dr, dc);
    return offs;
}

}  // namespace

Mask dilate(const Mask& m, int radius) {
    if (radius < 1) throw ImageError("structuring element radius must be >= 1");
    const auto offs = disk_offsets(radius);
    Mask out(m.height, m.width);
#pragma omp parallel for
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            uint8_t v = 0;
            for (auto [dr, dc] : offs) {
                const int nr = r + dr, nc = c + dc;
                if (nr >= 0 && nr < m.height && nc >= 0 && nc < m.width && m.at(nr, nc)) {
                    v = 1;
                    break;
                }
            }
            out.at(r, c) = v;
        }
    }
    return out;
}

Mask erode(const Mask& m, int radius) {
    if (radius < 1) throw ImageError("structuring element radius must be >= 1");
    const auto offs = disk_offsets(radius);
    Mask out(m.height, m.width);
#pragma omp parallel for
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            uint8_t v = 1;
            for (auto [dr, dc] : offs) {
                const int nr = r + dr, nc = c + dc;
                // out-of-bounds counts as background
                if (nr < 0 || nr >= m.height || nc < 0 || nc >= m.width || !m.at(nr, nc)) {
                    v = 0;
                    break;
                }
            }
            out.at(r, c) = v;
        }
    }
    return out;
}

Mask closing(const Mask& m, int radius) { return erode(dilate(m, radius), radius); }

Mask fill_holes(const Mask& m) {
    const int h = m.height, w = m.width;
    // flood background from the border; unreached background is a hole
    std::vector<uint8_t> outside(static_cast<size_t>(h) * w, 0);
    std::deque<std::pair<int, int>> queue;
    auto push = [&](int r, int c) {
        const size_t i = static_cast<size_t>(r) * w + c;
        if (!m.on[i] && !outside[i]) {
            outside[i] = 1;
            queue.emplace_back(r, c);
        }
    };
    for (int c = 0; c < w; ++c) {
        push(0, c);
        push(h - 1, c);
    }
    for (int r = 0; r < h; ++r) {
        push(r, 0);
        push(r, w - 1);
    }
    while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        if (r > 0) push(r - 1, c);
        if (r + 1 < h) push(r + 1, c);
        if (c > 0) push(r, c - 1);
        if (c + 1 < w) push(r, c + 1);
    }

    Mask out = m;
    for (size_t i = 0; i < out.on.size(); ++i)
        if (!m.on[i] && !outside[i]) out.on[i] = 1;
    return out;
}

namespace {

// Removes matrix components whose closing never reaches the network.
// Returns true when anything changed.
bool prune_disconnected_matrix(LabelMap& map, const Mask& network, int closing_radius) {
    Mask matrix = class_mask(map, kMatrix);
    if (matrix.count() == 0) return false;
    Mask closed = closing(matrix, closing_radius);
    // components of the closed mask; a component survives when it overlaps or
    // 4-touches the network
    ParticleSet comps = connected_components(closed, 8);
    std::vector<uint8_t> keep(comps.particles.size() + 1, 0);
    const int h = map.height, w = map.width;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int32_t id = comps.label_grid[static_cast<size_t>(r) * w + c];
            if (id == 0 || keep[id]) continue;
            if (network.at(r, c) || (r > 0 && network.at(r - 1, c)) ||
                (r + 1 < h && network.at(r + 1, c)) || (c > 0 && network.at(r, c - 1)) ||
                (c + 1 < w && network.at(r, c + 1)))
                keep[id] = 1;
        }
    }
    bool changed = false;
    for (size_t i = 0; i < map.size(); ++i) {
        if (map.labels[i] != kMatrix) continue;
        const int32_t id = comps.label_grid[i];
        if (id == 0 || !keep[id]) {
            map.labels[i] = kSpheroidite;
            changed = true;
        }
    }
    return changed;
}

}  // namespace

LabelMap clean_microconstituent_map(const LabelMap& map, const DzoneParams& params) {
    if (map.num_classes != 4)
        throw ImageError("clean_microconstituent_map expects a K=4 map");

    LabelMap out = map;
    Mask network = class_mask(out, kNetwork);
    if (network.count() == 0)
        throw ImageError("clean_microconstituent_map: no network pixels");

    if (params.min_network_component_px > 0) {
        ParticleSet comps = connected_components(network, 8);
        for (size_t i = 0; i < network.on.size(); ++i) {
            const int32_t id = comps.label_grid[i];
            if (id != 0 && comps.particles[id - 1].area_px < params.min_network_component_px) {
                network.on[i] = 0;
                out.labels[i] = kSpheroidite;
            }
        }
        if (network.count() == 0)
            throw ImageError("clean_microconstituent_map: network filter removed everything");
    }

    // 1. fill matrix pixels enclosed by the network
    Mask filled = fill_holes(network);
    for (size_t i = 0; i < out.size(); ++i)
        if (filled.on[i] && out.labels[i] == kMatrix) out.labels[i] = kNetwork;
    network = class_mask(out, kNetwork);

    // 2. drop matrix segments whose closing does not reach the network
    prune_disconnected_matrix(out, network, params.closing_radius);

    // 3. matrix nearer widmanstatten than network -> out, then widmanstatten -> out
    Mask wid = class_mask(out, kWidmanstatten);
    if (wid.count() > 0) {
        DistanceMap to_net = distance_transform(network);
        DistanceMap to_wid = distance_transform(wid);
        for (size_t i = 0; i < out.size(); ++i)
            if (out.labels[i] == kMatrix && to_wid.d[i] < to_net.d[i])
                out.labels[i] = kSpheroidite;
        for (size_t i = 0; i < out.size(); ++i)
            if (out.labels[i] == kWidmanstatten) out.labels[i] = kSpheroidite;
        // removal may have split matrix segments; re-check connectivity
        while (prune_disconnected_matrix(out, network, params.closing_radius)) {
        }
    }
    return out;
}

InterfaceSet extract_interfaces(const LabelMap& cleaned) {
    const int h = cleaned.height, w = cleaned.width;
    InterfaceSet s;
    s.network_interface = Mask(h, w);
    s.zone_boundary = Mask(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (cleaned.at(r, c) != kMatrix) continue;
            bool non_matrix_nb = false, network_nb = false;
            auto look = [&](int nr, int nc) {
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) return;
                const uint8_t v = cleaned.at(nr, nc);
                if (v != kMatrix) non_matrix_nb = true;
                if (v == kNetwork) network_nb = true;
            };
            look(r - 1, c);
            look(r + 1, c);
            look(r, c - 1);
            look(r, c + 1);
            if (!non_matrix_nb) continue;
            if (network_nb)
                s.network_interface.at(r, c) = 1;
            else
                s.zone_boundary.at(r, c) = 1;
        }
    }
    return s;
}

EmpiricalDistribution denuded_zone_widths(const LabelMap& map, const DzoneParams& params,
                                          std::optional<double> um_per_px) {
    LabelMap cleaned = clean_microconstituent_map(map, params);
    InterfaceSet ifaces = extract_interfaces(cleaned);
    DistanceMap to_net = distance_transform(class_mask(cleaned, kNetwork));

    std::vector<double> widths;
    for (size_t i = 0; i < cleaned.size(); ++i) {
        if (!ifaces.zone_boundary.on[i]) continue;
        double wdt = to_net.d[i];
        if (um_per_px) wdt *= *um_per_px;
        widths.push_back(wdt);
    }
    return EmpiricalDistribution::from(std::move(widths), um_per_px ? "um" : "px");
}

}  // namespace microseg
