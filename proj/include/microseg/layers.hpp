#pragma once

#include <cstdint>
#include <vector>

namespace microseg::kernels {

// 2-D convolution, stride 1, same-size zero padding, odd square kernel.
// in: cin x h x w, weight: cout x cin x k x k, bias: cout, out: cout x h x w.
// Parallel over output channels; each output element is accumulated serially,
// so results are bitwise identical for any thread count.
void conv2d_forward(const double* in, int cin, int h, int w, const double* weight,
                    const double* bias, int cout, int ksize, double* out);

// d_in: cin x h x w (overwritten), d_weight/d_bias accumulated in place.
void conv2d_backward(const double* d_out, const double* in, const double* weight,
                     int cin, int h, int w, int cout, int ksize, double* d_in,
                     double* d_weight, double* d_bias);

namespace serial {
// Reference kernel kept for testing and benchmarking the parallel path.
void conv2d_forward(const double* in, int cin, int h, int w, const double* weight,
                    const double* bias, int cout, int ksize, double* out);
}  // namespace serial

void relu_forward(const double* in, size_t n, double* out);
void relu_backward(const double* d_out, const double* pre, size_t n, double* d_in);

// 2x2 max pool, stride 2; hout = h/2, wout = w/2 (trailing odd row/col dropped).
// argmax records the flat input index that won each window.
void maxpool2x2_forward(const double* in, int c, int h, int w, double* out,
                        int32_t* argmax);
void maxpool2x2_backward(const double* d_out, const int32_t* argmax, int c, int h,
                         int w, double* d_in);

}  // namespace microseg::kernels
