#include "microseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "microseg/layers.hpp"

namespace microseg {
namespace {

// y = x * W^T + b, x: p x in, w: out x in, y: p x out
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    const int p = x.shape[0], in = x.shape[1], out = w.shape[0];
    y = Tensor({p, out});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < p; ++i) {
        const double* xi = x.ptr() + static_cast<size_t>(i) * in;
        double* yi = y.ptr() + static_cast<size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            const double* wo = w.ptr() + static_cast<size_t>(o) * in;
            double acc = b.data[o];
            for (int j = 0; j < in; ++j) acc += wo[j] * xi[j];
            yi[o] = acc;
        }
    }
}

// accumulates dw/db, writes dx
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw,
                     Tensor& db, Tensor* dx) {
    const int p = x.shape[0], in = x.shape[1], out = w.shape[0];
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) {
        double* dwo = dw.ptr() + static_cast<size_t>(o) * in;
        double dbo = 0.0;
        for (int i = 0; i < p; ++i) {
            const double g = dy.data[static_cast<size_t>(i) * out + o];
            if (g == 0.0) continue;
            dbo += g;
            const double* xi = x.ptr() + static_cast<size_t>(i) * in;
            for (int j = 0; j < in; ++j) dwo[j] += g * xi[j];
        }
        db.data[o] += dbo;
    }
    if (dx) {
        *dx = Tensor({p, in});
#pragma omp parallel for schedule(static)
        for (int i = 0; i < p; ++i) {
            const double* gyi = dy.ptr() + static_cast<size_t>(i) * out;
            double* dxi = dx->ptr() + static_cast<size_t>(i) * in;
            for (int o = 0; o < out; ++o) {
                const double g = gyi[o];
                if (g == 0.0) continue;
                const double* wo = w.ptr() + static_cast<size_t>(o) * in;
                for (int j = 0; j < in; ++j) dxi[j] += g * wo[j];
            }
        }
    }
}

}  // namespace

int NetConfig::hypercolumn_dim() const {
    int d = 0;
    for (int t = 0; t < num_taps(); ++t) d += tap_channels(t);
    return d;
}

void NetConfig::validate() const {
    if (block_channels.empty()) throw ImageError("net: need at least one block");
    if (convs_per_block < 1) throw ImageError("net: convs_per_block must be >= 1");
    if (kernel % 2 == 0 || deep_tap_kernel % 2 == 0)
        throw ImageError("net: kernels must be odd");
    if (num_classes < 2) throw ImageError("net: need at least 2 classes");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ImageError("net: dropout rate must lie in [0,1)");
}

Param& Model::param(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw ImageError("unknown parameter " + name);
}
const Param& Model::param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
}
Tensor& Model::buffer(const std::string& name) {
    for (auto& [n, t] : buffers)
        if (n == name) return t;
    throw ImageError("unknown buffer " + name);
}
const Tensor& Model::buffer(const std::string& name) const {
    return const_cast<Model*>(this)->buffer(name);
}
void Model::zero_grads() {
    for (auto& p : params) p.grad.zero();
}

Model init_model(const NetConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    std::mt19937_64 rng(seed);

    auto add_param = [&](const std::string& name, std::vector<int> shape, bool backbone,
                         double he_fan_in) {
        Param p;
        p.name = name;
        p.value = Tensor(shape);
        p.grad = Tensor(shape);
        p.backbone = backbone;
        if (he_fan_in > 0.0) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / he_fan_in));
            for (double& v : p.value.data) v = dist(rng);
        }
        m.params.push_back(std::move(p));
    };
    auto add_bn = [&](const std::string& prefix, int channels, bool backbone) {
        Param gamma{prefix + ".gamma", Tensor({channels}, 1.0), Tensor({channels}), backbone};
        Param beta{prefix + ".beta", Tensor({channels}, 0.0), Tensor({channels}), backbone};
        m.params.push_back(std::move(gamma));
        m.params.push_back(std::move(beta));
        m.buffers.emplace_back(prefix + ".mean", Tensor({channels}, 0.0));
        m.buffers.emplace_back(prefix + ".var", Tensor({channels}, 1.0));
    };

    int in_c = 1;
    for (int b = 0; b < config.num_blocks(); ++b) {
        const int out_c = config.block_channels[b];
        for (int i = 0; i < config.convs_per_block; ++i) {
            const int cin = i == 0 ? in_c : out_c;
            const std::string base =
                "block" + std::to_string(b) + ".conv" + std::to_string(i);
            add_param(base + ".w", {out_c, cin, config.kernel, config.kernel}, true,
                      double(config.kernel) * config.kernel * cin);
            add_param(base + ".b", {out_c}, true, 0.0);
        }
        in_c = out_c;
    }
    if (config.deep_tap) {
        const int cin = config.block_channels.back();
        add_param("deep.w",
                  {config.deep_tap_channels, cin, config.deep_tap_kernel,
                   config.deep_tap_kernel},
                  true, double(config.deep_tap_kernel) * config.deep_tap_kernel * cin);
        add_param("deep.b", {config.deep_tap_channels}, true, 0.0);
    }
    for (int t = 0; t < config.num_taps(); ++t)
        add_bn("tap" + std::to_string(t), config.tap_channels(t), false);

    int mlp_in = config.hypercolumn_dim();
    for (size_t i = 0; i < config.mlp_widths.size(); ++i) {
        const int out = config.mlp_widths[i];
        const std::string base = "mlp" + std::to_string(i);
        add_param(base + ".w", {out, mlp_in}, false, double(mlp_in));
        add_param(base + ".b", {out}, false, 0.0);
        add_bn(base + ".bn", out, false);
        mlp_in = out;
    }
    add_param("head.w", {config.num_classes, mlp_in}, false, double(mlp_in));
    add_param("head.b", {config.num_classes}, false, 0.0);
    return m;
}

std::vector<const Tensor*> BackboneCache::tap_raw() const {
    std::vector<const Tensor*> taps;
    for (const auto& b : blocks) taps.push_back(&b.post.back());
    if (config->deep_tap) taps.push_back(&deep_post);
    return taps;
}

BackboneCache backbone_forward(const Model& model, const Micrograph& image) {
    const NetConfig& cfg = model.config;
    if (image.height < cfg.min_input_px() || image.width < cfg.min_input_px())
        throw ImageError("image smaller than the pooling stack (" +
                         std::to_string(cfg.min_input_px()) + " px minimum)");

    BackboneCache cache;
    cache.config = &cfg;
    cache.in_h = image.height;
    cache.in_w = image.width;
    cache.input = Tensor({1, image.height, image.width});
    std::copy(image.pixels.begin(), image.pixels.end(), cache.input.data.begin());

    const Tensor* in = &cache.input;
    int in_c = 1, h = image.height, w = image.width;
    for (int b = 0; b < cfg.num_blocks(); ++b) {
        BlockCache bc;
        bc.h = h;
        bc.w = w;
        const int out_c = cfg.block_channels[b];
        for (int i = 0; i < cfg.convs_per_block; ++i) {
            const std::string base =
                "block" + std::to_string(b) + ".conv" + std::to_string(i);
            const Tensor& wgt = model.param(base + ".w").value;
            const Tensor& bias = model.param(base + ".b").value;
            const int cin = i == 0 ? in_c : out_c;
            Tensor pre({out_c, h, w});
            kernels::conv2d_forward(in->ptr(), cin, h, w, wgt.ptr(), bias.ptr(), out_c,
                                    cfg.kernel, pre.ptr());
            Tensor post({out_c, h, w});
            kernels::relu_forward(pre.ptr(), pre.size(), post.ptr());
            bc.pre.push_back(std::move(pre));
            bc.post.push_back(std::move(post));
            in = &bc.post.back();
        }
        if (b + 1 < cfg.num_blocks()) {
            const int ho = h / 2, wo = w / 2;
            bc.pooled = Tensor({out_c, ho, wo});
            bc.pool_argmax.resize(bc.pooled.size());
            kernels::maxpool2x2_forward(bc.post.back().ptr(), out_c, h, w,
                                        bc.pooled.ptr(), bc.pool_argmax.data());
            h = ho;
            w = wo;
        }
        cache.blocks.push_back(std::move(bc));
        in = (b + 1 < cfg.num_blocks()) ? &cache.blocks.back().pooled
                                        : &cache.blocks.back().post.back();
        in_c = out_c;
    }

    if (cfg.deep_tap) {
        const Tensor& src = cache.blocks.back().post.back();
        const int c = cfg.block_channels.back();
        cache.deep_pre = Tensor({cfg.deep_tap_channels, h, w});
        kernels::conv2d_forward(src.ptr(), c, h, w, model.param("deep.w").value.ptr(),
                                model.param("deep.b").value.ptr(), cfg.deep_tap_channels,
                                cfg.deep_tap_kernel, cache.deep_pre.ptr());
        cache.deep_post = Tensor(cache.deep_pre.shape);
        kernels::relu_forward(cache.deep_pre.ptr(), cache.deep_pre.size(),
                              cache.deep_post.ptr());
    }
    return cache;
}

namespace {

// normalize a set of per-image maps (one tap) with given moments
void bn_apply(const std::vector<const Tensor*>& raw, const std::vector<double>& mean,
              const std::vector<double>& var, const Tensor& gamma, const Tensor& beta,
              double eps, std::vector<Tensor*> out) {
    const int c = static_cast<int>(mean.size());
    for (size_t img = 0; img < raw.size(); ++img) {
        const Tensor& x = *raw[img];
        Tensor& y = *out[img];
        const int plane = x.shape[1] * x.shape[2];
        for (int ch = 0; ch < c; ++ch) {
            const double istd = 1.0 / std::sqrt(var[ch] + eps);
            const double g = gamma.data[ch], bt = beta.data[ch], mu = mean[ch];
            const double* xp = x.ptr() + static_cast<size_t>(ch) * plane;
            double* yp = y.ptr() + static_cast<size_t>(ch) * plane;
            for (int i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * istd + bt;
        }
    }
}

}  // namespace

TapBatch batchnorm_taps(const Model& model, const std::vector<BackboneCache>& batch,
                        bool train, Model* running_update) {
    const NetConfig& cfg = model.config;
    TapBatch out;
    out.maps.resize(batch.size());
    out.caches.resize(cfg.num_taps());

    for (int t = 0; t < cfg.num_taps(); ++t) {
        const int c = cfg.tap_channels(t);
        std::vector<const Tensor*> raw;
        for (const auto& bc : batch) raw.push_back(bc.tap_raw()[t]);

        BNCache& cache = out.caches[t];
        cache.mean.assign(c, 0.0);
        cache.var.assign(c, 0.0);

        const std::string prefix = "tap" + std::to_string(t);
        if (train) {
            size_t n = 0;
            for (const Tensor* x : raw) n += static_cast<size_t>(x->shape[1]) * x->shape[2];
            for (int ch = 0; ch < c; ++ch) {
                double sum = 0.0, sq = 0.0;
                for (const Tensor* x : raw) {
                    const int plane = x->shape[1] * x->shape[2];
                    const double* xp = x->ptr() + static_cast<size_t>(ch) * plane;
                    for (int i = 0; i < plane; ++i) {
                        sum += xp[i];
                        sq += xp[i] * xp[i];
                    }
                }
                const double mu = sum / n;
                cache.mean[ch] = mu;
                cache.var[ch] = std::max(0.0, sq / n - mu * mu);
            }
            if (running_update) {
                Tensor& rm = running_update->buffer(prefix + ".mean");
                Tensor& rv = running_update->buffer(prefix + ".var");
                for (int ch = 0; ch < c; ++ch) {
                    rm.data[ch] = cfg.bn_momentum * rm.data[ch] +
                                  (1 - cfg.bn_momentum) * cache.mean[ch];
                    rv.data[ch] = cfg.bn_momentum * rv.data[ch] +
                                  (1 - cfg.bn_momentum) * cache.var[ch];
                }
            }
        } else {
            const Tensor& rm = model.buffer(prefix + ".mean");
            const Tensor& rv = model.buffer(prefix + ".var");
            cache.mean.assign(rm.data.begin(), rm.data.end());
            cache.var.assign(rv.data.begin(), rv.data.end());
        }

        std::vector<Tensor*> outs;
        for (size_t img = 0; img < batch.size(); ++img) {
            out.maps[img].resize(cfg.num_taps());
            out.maps[img][t] = Tensor(raw[img]->shape);
            outs.push_back(&out.maps[img][t]);
        }
        bn_apply(raw, cache.mean, cache.var, model.param(prefix + ".gamma").value,
                 model.param(prefix + ".beta").value, cfg.bn_eps, outs);
    }
    return out;
}

void sparse_hypercolumn(const NetConfig& config, const std::vector<Tensor>& taps,
                        const std::vector<std::pair<int, int>>& coords, int in_h,
                        int in_w, double* rows_out, HypercolumnCache* cache) {
    const int num_taps = config.num_taps();
    const int dim = config.hypercolumn_dim();
    if (cache) {
        cache->entries.resize(coords.size() * num_taps);
        cache->num_pixels = static_cast<int>(coords.size());
    }

    for (size_t p = 0; p < coords.size(); ++p) {
        const auto [r, c] = coords[p];
        if (r < 0 || r >= in_h || c < 0 || c >= in_w)
            throw ImageError("hypercolumn coordinate out of bounds");
        double* row = rows_out + p * dim;
        int off = 0;
        for (int t = 0; t < num_taps; ++t) {
            const Tensor& tap = taps[t];
            const int tc = tap.shape[0], th = tap.shape[1], tw = tap.shape[2];
            const double s = static_cast<double>(config.tap_stride(t));
            // pixel centers at half-integers; edge clamp
            const double fy = (r + 0.5) / s - 0.5;
            const double fx = (c + 0.5) / s - 0.5;
            int r0 = static_cast<int>(std::floor(fy));
            int c0 = static_cast<int>(std::floor(fx));
            double wy = fy - r0, wx = fx - c0;
            if (r0 < 0) { r0 = 0; wy = 0.0; }
            if (c0 < 0) { c0 = 0; wx = 0.0; }
            if (r0 >= th - 1) { r0 = th - 1; wy = 0.0; }
            if (c0 >= tw - 1) { c0 = tw - 1; wx = 0.0; }
            const int r1 = std::min(r0 + 1, th - 1), c1 = std::min(c0 + 1, tw - 1);

            const int32_t idx[4] = {r0 * tw + c0, r0 * tw + c1, r1 * tw + c0,
                                    r1 * tw + c1};
            const double wgt[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx),
                                   wy * wx};
            if (cache) {
                auto& e = cache->entries[p * num_taps + t];
                std::copy(idx, idx + 4, e.idx);
                std::copy(wgt, wgt + 4, e.w);
            }
            const int plane = th * tw;
            for (int ch = 0; ch < tc; ++ch) {
                const double* xp = tap.ptr() + static_cast<size_t>(ch) * plane;
                row[off + ch] = wgt[0] * xp[idx[0]] + wgt[1] * xp[idx[1]] +
                                wgt[2] * xp[idx[2]] + wgt[3] * xp[idx[3]];
            }
            off += tc;
        }
    }
}

void sparse_hypercolumn_backward(const NetConfig& config,
                                 const HypercolumnCache& cache, const double* d_rows,
                                 std::vector<Tensor>& d_taps) {
    const int num_taps = config.num_taps();
    const int dim = config.hypercolumn_dim();
    for (int p = 0; p < cache.num_pixels; ++p) {
        const double* row = d_rows + static_cast<size_t>(p) * dim;
        int off = 0;
        for (int t = 0; t < num_taps; ++t) {
            Tensor& dt = d_taps[t];
            const int tc = dt.shape[0], plane = dt.shape[1] * dt.shape[2];
            const auto& e = cache.entries[static_cast<size_t>(p) * num_taps + t];
            for (int ch = 0; ch < tc; ++ch) {
                const double g = row[off + ch];
                if (g == 0.0) continue;
                double* xp = dt.ptr() + static_cast<size_t>(ch) * plane;
                for (int k = 0; k < 4; ++k) xp[e.idx[k]] += g * e.w[k];
            }
            off += tc;
        }
    }
}

void mlp_forward(const Model& model, const Tensor& x, bool train, std::mt19937_64* rng,
                 const std::vector<uint8_t>* fixed_mask, MlpCache* cache,
                 Model* running_update) {
    const NetConfig& cfg = model.config;
    const int p = x.shape[0];
    cache->input = x;
    cache->lin_pre.clear();
    cache->relu_out.clear();
    cache->bn_out.clear();
    cache->bn.clear();

    const Tensor* cur = &cache->input;
    for (size_t layer = 0; layer < cfg.mlp_widths.size(); ++layer) {
        const std::string base = "mlp" + std::to_string(layer);
        Tensor pre;
        linear_forward(*cur, model.param(base + ".w").value,
                       model.param(base + ".b").value, pre);
        Tensor post(pre.shape);
        kernels::relu_forward(pre.ptr(), pre.size(), post.ptr());

        // batch norm per feature over the pixel batch
        const int width = cfg.mlp_widths[layer];
        BNCache bn;
        bn.mean.assign(width, 0.0);
        bn.var.assign(width, 0.0);
        const std::string prefix = base + ".bn";
        if (train) {
            for (int f = 0; f < width; ++f) {
                double sum = 0.0, sq = 0.0;
                for (int i = 0; i < p; ++i) {
                    const double v = post.data[static_cast<size_t>(i) * width + f];
                    sum += v;
                    sq += v * v;
                }
                const double mu = sum / p;
                bn.mean[f] = mu;
                bn.var[f] = std::max(0.0, sq / p - mu * mu);
            }
            if (running_update) {
                Tensor& rm = running_update->buffer(prefix + ".mean");
                Tensor& rv = running_update->buffer(prefix + ".var");
                for (int f = 0; f < width; ++f) {
                    rm.data[f] = cfg.bn_momentum * rm.data[f] +
                                 (1 - cfg.bn_momentum) * bn.mean[f];
                    rv.data[f] = cfg.bn_momentum * rv.data[f] +
                                 (1 - cfg.bn_momentum) * bn.var[f];
                }
            }
        } else {
            const Tensor& rm = model.buffer(prefix + ".mean");
            const Tensor& rv = model.buffer(prefix + ".var");
            bn.mean.assign(rm.data.begin(), rm.data.end());
            bn.var.assign(rv.data.begin(), rv.data.end());
        }

        Tensor bn_out(post.shape);
        const Tensor& gamma = model.param(prefix + ".gamma").value;
        const Tensor& beta = model.param(prefix + ".beta").value;
        for (int f = 0; f < width; ++f) {
            const double istd = 1.0 / std::sqrt(bn.var[f] + cfg.bn_eps);
            const double g = gamma.data[f], bt = beta.data[f], mu = bn.mean[f];
            for (int i = 0; i < p; ++i) {
                const size_t idx = static_cast<size_t>(i) * width + f;
                bn_out.data[idx] = g * (post.data[idx] - mu) * istd + bt;
            }
        }

        cache->lin_pre.push_back(std::move(pre));
        cache->relu_out.push_back(std::move(post));
        cache->bn.push_back(std::move(bn));
        cache->bn_out.push_back(std::move(bn_out));
        cur = &cache->bn_out.back();
    }

    // dropout after the final hidden layer
    cache->dropout_mask.clear();
    if (!cfg.mlp_widths.empty() && train && cfg.dropout_rate > 0.0) {
        const size_t n = cur->size();
        cache->dropout_mask.resize(n);
        if (fixed_mask) {
            if (fixed_mask->size() != n)
                throw ImageError("dropout mask size mismatch");
            cache->dropout_mask = *fixed_mask;
        } else {
            if (!rng) throw ImageError("dropout requires an rng in train mode");
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (size_t i = 0; i < n; ++i)
                cache->dropout_mask[i] = unif(*rng) >= cfg.dropout_rate ? 1 : 0;
        }
        cache->dropped = *cur;
        const double scale = 1.0 / (1.0 - cfg.dropout_rate);
        for (size_t i = 0; i < n; ++i)
            cache->dropped.data[i] = cache->dropout_mask[i] ? cache->dropped.data[i] * scale : 0.0;
        cur = &cache->dropped;
    } else {
        cache->dropped = *cur;
        cur = &cache->dropped;
    }

    linear_forward(*cur, model.param("head.w").value, model.param("head.b").value,
                   cache->logits);
}

void mlp_backward(Model& model, const MlpCache& cache, const Tensor& d_logits,
                  Tensor* d_input) {
    const NetConfig& cfg = model.config;
    const int p = cache.input.shape[0];

    Tensor d_cur;
    linear_backward(cache.dropped, model.param("head.w").value, d_logits,
                    model.param("head.w").grad, model.param("head.b").grad, &d_cur);

    if (!cache.dropout_mask.empty()) {
        const double scale = 1.0 / (1.0 - cfg.dropout_rate);
        for (size_t i = 0; i < d_cur.size(); ++i)
            d_cur.data[i] = cache.dropout_mask[i] ? d_cur.data[i] * scale : 0.0;
    }

    for (int layer = static_cast<int>(cfg.mlp_widths.size()) - 1; layer >= 0; --layer) {
        const std::string base = "mlp" + std::to_string(layer);
        const std::string prefix = base + ".bn";
        const int width = cfg.mlp_widths[layer];
        const BNCache& bn = cache.bn[layer];
        const Tensor& relu_out = cache.relu_out[layer];
        Tensor& dgamma = model.param(prefix + ".gamma").grad;
        Tensor& dbeta = model.param(prefix + ".beta").grad;
        const Tensor& gamma = model.param(prefix + ".gamma").value;

        // batch-statistics batch-norm backward
        Tensor d_post(relu_out.shape);
        for (int f = 0; f < width; ++f) {
            const double istd = 1.0 / std::sqrt(bn.var[f] + cfg.bn_eps);
            const double mu = bn.mean[f];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < p; ++i) {
                const size_t idx = static_cast<size_t>(i) * width + f;
                const double dy = d_cur.data[idx];
                const double xhat = (relu_out.data[idx] - mu) * istd;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
            dgamma.data[f] += sum_dy_xhat;
            dbeta.data[f] += sum_dy;
            const double g = gamma.data[f];
            for (int i = 0; i < p; ++i) {
                const size_t idx = static_cast<size_t>(i) * width + f;
                const double dy = d_cur.data[idx];
                const double xhat = (relu_out.data[idx] - mu) * istd;
                d_post.data[idx] =
                    g * istd * (dy - sum_dy / p - xhat * sum_dy_xhat / p);
            }
        }

        Tensor d_pre(d_post.shape);
        kernels::relu_backward(d_post.ptr(), cache.lin_pre[layer].ptr(), d_post.size(),
                               d_pre.ptr());

        const Tensor& lin_in = layer == 0 ? cache.input : cache.bn_out[layer - 1];
        Tensor d_in;
        linear_backward(lin_in, model.param(base + ".w").value, d_pre,
                        model.param(base + ".w").grad, model.param(base + ".b").grad,
                        (layer == 0 && !d_input) ? nullptr : &d_in);
        d_cur = std::move(d_in);
    }
    if (d_input) *d_input = std::move(d_cur);
}

SparseBatch forward_sparse(Model& model, const std::vector<const Micrograph*>& images,
                           const std::vector<const LabelMap*>& labels,
                           const std::vector<std::vector<std::pair<int, int>>>& coords,
                           std::mt19937_64* dropout_rng,
                           const std::vector<uint8_t>* fixed_mask) {
    SparseBatch batch;
    batch.coords = coords;
    for (const Micrograph* img : images)
        batch.backbone.push_back(backbone_forward(model, *img));
    batch.taps = batchnorm_taps(model, batch.backbone, /*train=*/true, &model);

    const int dim = model.config.hypercolumn_dim();
    size_t total = 0;
    for (const auto& c : coords) total += c.size();
    batch.x = Tensor({static_cast<int>(total), dim});
    batch.hc.resize(images.size());

    size_t row = 0;
    for (size_t img = 0; img < images.size(); ++img) {
        sparse_hypercolumn(model.config, batch.taps.maps[img], coords[img],
                           images[img]->height, images[img]->width,
                           batch.x.ptr() + row * dim, &batch.hc[img]);
        for (const auto& [r, c] : coords[img])
            batch.labels.push_back(labels[img]->at(r, c));
        row += coords[img].size();
    }

    mlp_forward(model, batch.x, /*train=*/true, dropout_rng, fixed_mask, &batch.mlp,
                &model);
    return batch;
}

namespace {

// propagates tap gradients through one image's backbone, accumulating conv
// parameter gradients
void backbone_backward(Model& model, const BackboneCache& cache,
                       std::vector<Tensor>& d_tap_raw) {
    const NetConfig& cfg = model.config;
    const int nb = cfg.num_blocks();

    if (cfg.deep_tap) {
        Tensor d_pre(cache.deep_pre.shape);
        kernels::relu_backward(d_tap_raw[nb].ptr(), cache.deep_pre.ptr(),
                               d_pre.size(), d_pre.ptr());
        const Tensor& src = cache.blocks.back().post.back();
        Tensor d_src(src.shape);
        kernels::conv2d_backward(d_pre.ptr(), src.ptr(), model.param("deep.w").value.ptr(),
                                 src.shape[0], src.shape[1], src.shape[2],
                                 cfg.deep_tap_channels, cfg.deep_tap_kernel, d_src.ptr(),
                                 model.param("deep.w").grad.ptr(),
                                 model.param("deep.b").grad.ptr());
        for (size_t i = 0; i < d_src.size(); ++i)
            d_tap_raw[nb - 1].data[i] += d_src.data[i];
    }

    Tensor d_from_deeper;  // gradient on this block's pooled output
    for (int b = nb - 1; b >= 0; --b) {
        const BlockCache& bc = cache.blocks[b];
        const int out_c = cfg.block_channels[b];

        Tensor d_post = std::move(d_tap_raw[b]);
        if (b + 1 < nb) {
            Tensor unpooled({out_c, bc.h, bc.w});
            kernels::maxpool2x2_backward(d_from_deeper.ptr(), bc.pool_argmax.data(),
                                         out_c, bc.h, bc.w, unpooled.ptr());
            for (size_t i = 0; i < d_post.size(); ++i)
                d_post.data[i] += unpooled.data[i];
        }

        for (int i = cfg.convs_per_block - 1; i >= 0; --i) {
            const std::string base =
                "block" + std::to_string(b) + ".conv" + std::to_string(i);
            Tensor d_pre(bc.pre[i].shape);
            kernels::relu_backward(d_post.ptr(), bc.pre[i].ptr(), d_pre.size(),
                                   d_pre.ptr());

            const Tensor* conv_in;
            int cin;
            if (i > 0) {
                conv_in = &bc.post[i - 1];
                cin = out_c;
            } else if (b == 0) {
                conv_in = &cache.input;
                cin = 1;
            } else {
                conv_in = &cache.blocks[b - 1].pooled;
                cin = cfg.block_channels[b - 1];
            }
            Tensor d_in({cin, bc.h, bc.w});
            kernels::conv2d_backward(d_pre.ptr(), conv_in->ptr(),
                                     model.param(base + ".w").value.ptr(), cin, bc.h,
                                     bc.w, out_c, cfg.kernel, d_in.ptr(),
                                     model.param(base + ".w").grad.ptr(),
                                     model.param(base + ".b").grad.ptr());
            d_post = std::move(d_in);
        }
        d_from_deeper = std::move(d_post);
    }
}

}  // namespace

void backward_sparse(Model& model, SparseBatch& batch, const Tensor& d_logits,
                     bool freeze_backbone) {
    const NetConfig& cfg = model.config;
    Tensor d_x;
    mlp_backward(model, batch.mlp, d_logits, &d_x);

    // scatter hypercolumn gradients into per-tap maps
    std::vector<std::vector<Tensor>> d_norm(batch.backbone.size());
    const int dim = cfg.hypercolumn_dim();
    size_t row = 0;
    for (size_t img = 0; img < batch.backbone.size(); ++img) {
        d_norm[img].resize(cfg.num_taps());
        for (int t = 0; t < cfg.num_taps(); ++t)
            d_norm[img][t] = Tensor(batch.taps.maps[img][t].shape);
        sparse_hypercolumn_backward(cfg, batch.hc[img], d_x.ptr() + row * dim,
                                    d_norm[img]);
        row += batch.coords[img].size();
    }

    // tap batch-norm backward (batch statistics across images)
    std::vector<std::vector<Tensor>> d_raw(batch.backbone.size());
    for (size_t img = 0; img < batch.backbone.size(); ++img)
        d_raw[img].resize(cfg.num_taps());

    for (int t = 0; t < cfg.num_taps(); ++t) {
        const int c = cfg.tap_channels(t);
        const std::string prefix = "tap" + std::to_string(t);
        const BNCache& bn = batch.taps.caches[t];
        const Tensor& gamma = model.param(prefix + ".gamma").value;
        Tensor& dgamma = model.param(prefix + ".gamma").grad;
        Tensor& dbeta = model.param(prefix + ".beta").grad;

        std::vector<const Tensor*> raw;
        for (const auto& bc : batch.backbone) raw.push_back(bc.tap_raw()[t]);
        size_t n = 0;
        for (const Tensor* x : raw) n += static_cast<size_t>(x->shape[1]) * x->shape[2];

        for (int ch = 0; ch < c; ++ch) {
            const double istd = 1.0 / std::sqrt(bn.var[ch] + cfg.bn_eps);
            const double mu = bn.mean[ch];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (size_t img = 0; img < raw.size(); ++img) {
                const int plane = raw[img]->shape[1] * raw[img]->shape[2];
                const double* xp = raw[img]->ptr() + static_cast<size_t>(ch) * plane;
                const double* dyp =
                    d_norm[img][t].ptr() + static_cast<size_t>(ch) * plane;
                for (int i = 0; i < plane; ++i) {
                    sum_dy += dyp[i];
                    sum_dy_xhat += dyp[i] * (xp[i] - mu) * istd;
                }
            }
            dgamma.data[ch] += sum_dy_xhat;
            dbeta.data[ch] += sum_dy;

            const double g = gamma.data[ch];
            for (size_t img = 0; img < raw.size(); ++img) {
                const int plane = raw[img]->shape[1] * raw[img]->shape[2];
                if (d_raw[img][t].size() == 0) d_raw[img][t] = Tensor(raw[img]->shape);
                const double* xp = raw[img]->ptr() + static_cast<size_t>(ch) * plane;
                const double* dyp =
                    d_norm[img][t].ptr() + static_cast<size_t>(ch) * plane;
                double* dxp = d_raw[img][t].ptr() + static_cast<size_t>(ch) * plane;
                for (int i = 0; i < plane; ++i) {
                    const double xhat = (xp[i] - mu) * istd;
                    dxp[i] = g * istd *
                             (dyp[i] - sum_dy / double(n) - xhat * sum_dy_xhat / double(n));
                }
            }
        }
    }

    if (!freeze_backbone)
        for (size_t img = 0; img < batch.backbone.size(); ++img)
            backbone_backward(model, batch.backbone[img], d_raw[img]);
}

DensePrediction predict_dense(const Model& model, const Micrograph& image,
                              int pixel_batch) {
    const NetConfig& cfg = model.config;
    BackboneCache cache = backbone_forward(model, image);
    std::vector<BackboneCache> one;
    one.push_back(std::move(cache));
    TapBatch taps = batchnorm_taps(model, one, /*train=*/false);

    const int h = image.height, w = image.width, k = cfg.num_classes;
    DensePrediction pred;
    pred.labels = LabelMap(h, w, k);
    pred.probs.assign(k, std::vector<double>(static_cast<size_t>(h) * w, 0.0));

    const size_t total = static_cast<size_t>(h) * w;
    std::vector<std::pair<int, int>> coords;
    coords.reserve(pixel_batch);
    const int dim = cfg.hypercolumn_dim();

    for (size_t start = 0; start < total; start += pixel_batch) {
        const size_t end = std::min(total, start + pixel_batch);
        coords.clear();
        for (size_t i = start; i < end; ++i)
            coords.emplace_back(static_cast<int>(i / w), static_cast<int>(i % w));

        Tensor x({static_cast<int>(coords.size()), dim});
        sparse_hypercolumn(cfg, taps.maps[0], coords, h, w, x.ptr(), nullptr);

        MlpCache mlp;
        mlp_forward(model, x, /*train=*/false, nullptr, nullptr, &mlp);

        for (size_t i = 0; i < coords.size(); ++i) {
            const double* z = mlp.logits.ptr() + i * k;
            double zmax = z[0];
            for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c]);
            double denom = 0.0;
            for (int c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
            int best = 0;
            double best_p = -1.0;
            for (int c = 0; c < k; ++c) {
                const double p = std::exp(z[c] - zmax) / denom;
                pred.probs[c][start + i] = p;
                if (p > best_p) {
                    best_p = p;
                    best = c;
                }
            }
            pred.labels.labels[start + i] = static_cast<uint8_t>(best);
        }
    }
    return pred;
}

}  // namespace microseg
