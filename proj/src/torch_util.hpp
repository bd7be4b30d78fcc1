#pragma once

#include <torch/torch.h>

#include <string>

#include "outfit/image.hpp"
#include "outfit/region.hpp"
#include "outfit/serialize.hpp"

namespace outfit::detail {

inline torch::Dtype dtype_for(bool double_precision) { return double_precision ? torch::kFloat64 : torch::kFloat32; }

/// [n, H, W] indicator planes of a region map.
torch::Tensor onehot(const RegionMap& m, int n, torch::Dtype dtype);

/// [1, H, W] tensor of a binary mask.
torch::Tensor mask_tensor(const BinaryMask& mask, torch::Dtype dtype);

/// [3, H, W] image scaled to [-1, 1].
torch::Tensor image_tensor(const Image& image, torch::Dtype dtype);

/// Inverse of image_tensor for a [3, H, W] tensor.
Image tensor_image(const torch::Tensor& t);

/// Differentiable region pooling and broadcasting on batched tensors.
/// onehot: [B, n, H, W], v: [B, d, H, W] -> codes [B, n, d].
torch::Tensor pool_regions(const torch::Tensor& onehot, const torch::Tensor& v);
/// codes [B, n, d] -> [B, d, H, W].
torch::Tensor broadcast_regions(const torch::Tensor& codes, const torch::Tensor& onehot);

void export_module(const torch::nn::Module& module, const std::string& prefix, CheckpointFile& file);
void import_module(torch::nn::Module& module, const std::string& prefix, const CheckpointFile& file);

/// Constant for `constant` epochs, then linear decay towards zero over `decay`.
double scheduled_rate(double base, int epoch, int constant, int decay);

void set_learning_rate(torch::optim::Adam& optimizer, double lr);

/// Runs with torch configured for deterministic single-threaded execution.
void configure_torch_determinism();

}  // namespace outfit::detail
