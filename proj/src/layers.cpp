#include "microseg/layers.hpp"

#include <algorithm>
#include <cstring>

namespace microseg::kernels {
namespace {

inline void conv2d_one_channel(const double* in, int cin, int h, int w,
                               const double* weight, double bias, int ksize,
                               double* out) {
    const int pad = ksize / 2;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = bias;
            for (int ci = 0; ci < cin; ++ci) {
                const double* plane = in + static_cast<size_t>(ci) * h * w;
                const double* kw = weight + static_cast<size_t>(ci) * ksize * ksize;
                const int kr0 = std::max(0, pad - r), kr1 = std::min(ksize, h + pad - r);
                const int kc0 = std::max(0, pad - c), kc1 = std::min(ksize, w + pad - c);
                for (int kr = kr0; kr < kr1; ++kr) {
                    const double* row = plane + static_cast<size_t>(r + kr - pad) * w;
                    const double* krow = kw + static_cast<size_t>(kr) * ksize;
                    for (int kc = kc0; kc < kc1; ++kc)
                        acc += krow[kc] * row[c + kc - pad];
                }
            }
            out[static_cast<size_t>(r) * w + c] = acc;
        }
    }
}

}  // namespace

void conv2d_forward(const double* in, int cin, int h, int w, const double* weight,
                    const double* bias, int cout, int ksize, double* out) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        conv2d_one_channel(in, cin, h, w,
                           weight + static_cast<size_t>(co) * cin * ksize * ksize,
                           bias[co], ksize, out + static_cast<size_t>(co) * h * w);
    }
}

namespace serial {
void conv2d_forward(const double* in, int cin, int h, int w, const double* weight,
                    const double* bias, int cout, int ksize, double* out) {
    for (int co = 0; co < cout; ++co) {
        conv2d_one_channel(in, cin, h, w,
                           weight + static_cast<size_t>(co) * cin * ksize * ksize,
                           bias[co], ksize, out + static_cast<size_t>(co) * h * w);
    }
}
}  // namespace serial

void conv2d_backward(const double* d_out, const double* in, const double* weight,
                     int cin, int h, int w, int cout, int ksize, double* d_in,
                     double* d_weight, double* d_bias) {
    const int pad = ksize / 2;
    std::memset(d_in, 0, sizeof(double) * static_cast<size_t>(cin) * h * w);

    // input gradient: parallel over input channels, serial accumulation within
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        double* dplane = d_in + static_cast<size_t>(ci) * h * w;
        for (int co = 0; co < cout; ++co) {
            const double* dout = d_out + static_cast<size_t>(co) * h * w;
            const double* kw = weight +
                               (static_cast<size_t>(co) * cin + ci) * ksize * ksize;
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    const double g = dout[static_cast<size_t>(r) * w + c];
                    if (g == 0.0) continue;
                    const int kr0 = std::max(0, pad - r), kr1 = std::min(ksize, h + pad - r);
                    const int kc0 = std::max(0, pad - c), kc1 = std::min(ksize, w + pad - c);
                    for (int kr = kr0; kr < kr1; ++kr)
                        for (int kc = kc0; kc < kc1; ++kc)
                            dplane[static_cast<size_t>(r + kr - pad) * w + (c + kc - pad)] +=
                                g * kw[static_cast<size_t>(kr) * ksize + kc];
                }
            }
        }
    }

    // parameter gradients: parallel over output channels
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        const double* dout = d_out + static_cast<size_t>(co) * h * w;
        double db = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) db += dout[i];
        d_bias[co] += db;

        for (int ci = 0; ci < cin; ++ci) {
            const double* plane = in + static_cast<size_t>(ci) * h * w;
            double* dkw = d_weight + (static_cast<size_t>(co) * cin + ci) * ksize * ksize;
            for (int kr = 0; kr < ksize; ++kr) {
                for (int kc = 0; kc < ksize; ++kc) {
                    double acc = 0.0;
                    const int r0 = std::max(0, pad - kr), r1 = std::min(h, h + pad - kr);
                    const int c0 = std::max(0, pad - kc), c1 = std::min(w, w + pad - kc);
                    for (int r = r0; r < r1; ++r) {
                        const double* drow = dout + static_cast<size_t>(r) * w;
                        const double* irow = plane + static_cast<size_t>(r + kr - pad) * w;
                        for (int c = c0; c < c1; ++c)
                            acc += drow[c] * irow[c + kc - pad];
                    }
                    dkw[static_cast<size_t>(kr) * ksize + kc] += acc;
                }
            }
        }
    }
}

void relu_forward(const double* in, size_t n, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* d_out, const double* pre, size_t n, double* d_in) {
    for (size_t i = 0; i < n; ++i) d_in[i] = pre[i] > 0.0 ? d_out[i] : 0.0;
}

void maxpool2x2_forward(const double* in, int c, int h, int w, double* out,
                        int32_t* argmax) {
    const int ho = h / 2, wo = w / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = in + static_cast<size_t>(ch) * h * w;
        double* oplane = out + static_cast<size_t>(ch) * ho * wo;
        int32_t* aplane = argmax + static_cast<size_t>(ch) * ho * wo;
        for (int r = 0; r < ho; ++r) {
            for (int cc = 0; cc < wo; ++cc) {
                const int r0 = 2 * r, c0 = 2 * cc;
                int32_t best_i = static_cast<int32_t>(r0) * w + c0;
                double best = plane[best_i];
                const int32_t cands[3] = {static_cast<int32_t>(r0) * w + c0 + 1,
                                          static_cast<int32_t>(r0 + 1) * w + c0,
                                          static_cast<int32_t>(r0 + 1) * w + c0 + 1};
                for (int32_t i : cands) {
                    if (plane[i] > best) {
                        best = plane[i];
                        best_i = i;
                    }
                }
                oplane[static_cast<size_t>(r) * wo + cc] = best;
                aplane[static_cast<size_t>(r) * wo + cc] = best_i;
            }
        }
    }
}

void maxpool2x2_backward(const double* d_out, const int32_t* argmax, int c, int h,
                         int w, double* d_in) {
    const int ho = h / 2, wo = w / 2;
    std::memset(d_in, 0, sizeof(double) * static_cast<size_t>(c) * h * w);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* dplane = d_out + static_cast<size_t>(ch) * ho * wo;
        const int32_t* aplane = argmax + static_cast<size_t>(ch) * ho * wo;
        double* iplane = d_in + static_cast<size_t>(ch) * h * w;
        for (size_t i = 0; i < static_cast<size_t>(ho) * wo; ++i)
            iplane[aplane[i]] += dplane[i];
    }
}

}  // namespace microseg::kernels
