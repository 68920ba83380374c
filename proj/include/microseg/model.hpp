#pragma once

#include <random>
#include <string>
#include <vector>

#include "microseg/image.hpp"
#include "microseg/tensor.hpp"

namespace microseg {

// Backbone/classifier geometry. Blocks of 3x3 convs with 2x max-pool between
// blocks; the last conv of every block is tapped into the hypercolumn. An
// optional 7x7 conv tap can be stacked on the deepest block.
struct NetConfig {
    std::vector<int> block_channels{8, 16, 32, 64, 64};
    int convs_per_block = 2;
    int kernel = 3;
    bool deep_tap = false;
    int deep_tap_channels = 128;
    int deep_tap_kernel = 7;
    std::vector<int> mlp_widths{128, 128};
    double dropout_rate = 0.10;
    int num_classes = 4;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;

    int num_blocks() const { return static_cast<int>(block_channels.size()); }
    int num_taps() const { return num_blocks() + (deep_tap ? 1 : 0); }
    int tap_channels(int t) const {
        return t < num_blocks() ? block_channels[t] : deep_tap_channels;
    }
    int tap_stride(int t) const { return 1 << (t < num_blocks() ? t : num_blocks() - 1); }
    int hypercolumn_dim() const;
    int min_input_px() const { return 1 << (num_blocks() - 1); }
    void validate() const;
};

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool backbone = false;
};

struct Model {
    NetConfig config;
    std::vector<Param> params;
    std::vector<std::pair<std::string, Tensor>> buffers;  // batch-norm running moments

    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    Tensor& buffer(const std::string& name);
    const Tensor& buffer(const std::string& name) const;
    void zero_grads();
};

// He-initialized weights (sigma = sqrt(2/fan_in)), zero biases, unit
// batch-norm scale, zero offset.
Model init_model(const NetConfig& config, uint64_t seed);

// ---- forward/backward machinery ----

struct BlockCache {
    std::vector<Tensor> pre;   // conv pre-activations
    std::vector<Tensor> post;  // relu outputs
    Tensor pooled;
    std::vector<int32_t> pool_argmax;
    int h = 0, w = 0;
};

struct BackboneCache {
    Tensor input;  // 1 x H x W
    std::vector<BlockCache> blocks;
    Tensor deep_pre, deep_post;
    std::vector<const Tensor*> tap_raw() const;  // per tap, pre-batch-norm
    int in_h = 0, in_w = 0;
    const NetConfig* config = nullptr;
};

BackboneCache backbone_forward(const Model& model, const Micrograph& image);

struct BNCache {
    std::vector<double> mean, var;  // per channel, biased variance
};

// Batch-normalized tap maps for a batch of images. Train mode uses batch
// statistics and updates running moments; infer mode reads running moments.
struct TapBatch {
    std::vector<std::vector<Tensor>> maps;  // [image][tap]
    std::vector<BNCache> caches;            // per tap
};
TapBatch batchnorm_taps(const Model& model, const std::vector<BackboneCache>& batch,
                        bool train, Model* running_update = nullptr);

// Bilinear neighbor bookkeeping for one image's sampled pixels.
struct HypercolumnCache {
    struct Entry {
        int32_t idx[4];
        double w[4];
    };
    std::vector<Entry> entries;  // [pixel * num_taps + tap]
    int num_pixels = 0;
};

// Rows of the hypercolumn matrix for one image; coords are at input
// resolution. Out-of-bounds coords throw.
void sparse_hypercolumn(const NetConfig& config, const std::vector<Tensor>& taps,
                        const std::vector<std::pair<int, int>>& coords, int in_h,
                        int in_w, double* rows_out, HypercolumnCache* cache);

// Scatters hypercolumn-row gradients back into per-tap gradient maps.
void sparse_hypercolumn_backward(const NetConfig& config,
                                 const HypercolumnCache& cache, const double* d_rows,
                                 std::vector<Tensor>& d_taps);

struct MlpCache {
    Tensor input;  // P x D
    std::vector<Tensor> lin_pre, relu_out, bn_out;
    std::vector<BNCache> bn;
    std::vector<uint8_t> dropout_mask;  // per row of the final hidden layer
    Tensor dropped;                     // final hidden output after dropout
    Tensor logits;                      // P x K
};

// Per hidden layer: linear -> ReLU -> batch norm; dropout after the final
// hidden layer in train mode. fixed_mask (one byte per row) overrides the rng
// draw so a forward pass can be replayed exactly.
void mlp_forward(const Model& model, const Tensor& x, bool train,
                 std::mt19937_64* rng, const std::vector<uint8_t>* fixed_mask,
                 MlpCache* cache, Model* running_update = nullptr);

void mlp_backward(Model& model, const MlpCache& cache, const Tensor& d_logits,
                  Tensor* d_input);

// ---- sparse training pass over a batch ----

struct SparseBatch {
    std::vector<BackboneCache> backbone;
    TapBatch taps;
    std::vector<HypercolumnCache> hc;
    std::vector<std::vector<std::pair<int, int>>> coords;
    Tensor x;  // P_total x D
    MlpCache mlp;
    std::vector<uint8_t> labels;  // P_total
};

SparseBatch forward_sparse(Model& model, const std::vector<const Micrograph*>& images,
                           const std::vector<const LabelMap*>& labels,
                           const std::vector<std::vector<std::pair<int, int>>>& coords,
                           std::mt19937_64* dropout_rng,
                           const std::vector<uint8_t>* fixed_mask = nullptr);

// d_logits: P_total x K. Fills parameter gradients (accumulating); backbone
// conv gradients stay zero when freeze_backbone is set.
void backward_sparse(Model& model, SparseBatch& batch, const Tensor& d_logits,
                     bool freeze_backbone);

// ---- dense inference ----

struct DensePrediction {
    LabelMap labels;
    std::vector<std::vector<double>> probs;  // [class][pixel]
};

// Tiled dense inference with running batch-norm moments; deterministic.
DensePrediction predict_dense(const Model& model, const Micrograph& image,
                              int pixel_batch = 8192);

}  // namespace microseg
