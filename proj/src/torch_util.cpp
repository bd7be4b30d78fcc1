#include "torch_util.hpp"

#include <cstring>
#include <mutex>
#include <stdexcept>

namespace outfit::detail {

torch::Tensor onehot(const RegionMap& m, int n, torch::Dtype dtype) {
  auto out = torch::zeros({n, m.height(), m.width()}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const int l = m.at(y, x);
      if (l >= n) throw std::invalid_argument("region map label " + std::to_string(l) + " outside schema");
      acc[l][y][x] = 1.0f;
    }
  return out.to(dtype);
}

torch::Tensor mask_tensor(const BinaryMask& mask, torch::Dtype dtype) {
  auto out = torch::empty({1, mask.height, mask.width}, torch::kFloat32);
  auto* p = out.data_ptr<float>();
  for (std::size_t i = 0; i < mask.bits.size(); ++i) p[i] = mask.bits[i];
  return out.to(dtype);
}

torch::Tensor image_tensor(const Image& image, torch::Dtype dtype) {
  auto out = torch::empty({3, image.height(), image.width()}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) acc[c][y][x] = image.value(y, x, c) * 2.0f - 1.0f;
  return out.to(dtype);
}

Image tensor_image(const torch::Tensor& t) {
  auto f = t.detach().to(torch::kFloat64).contiguous();
  const int h = static_cast<int>(f.size(1)), w = static_cast<int>(f.size(2));
  auto acc = f.accessor<double, 3>();
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(y, x, {quantize_unit((acc[0][y][x] + 1.0) / 2.0), quantize_unit((acc[1][y][x] + 1.0) / 2.0),
                     quantize_unit((acc[2][y][x] + 1.0) / 2.0)});
  return img;
}

torch::Tensor pool_regions(const torch::Tensor& onehot, const torch::Tensor& v) {
  auto sums = torch::einsum("bnhw,bdhw->bnd", {onehot, v});
  auto counts = onehot.sum({2, 3}).clamp_min(1.0).unsqueeze(2);
  return sums / counts;
}

torch::Tensor broadcast_regions(const torch::Tensor& codes, const torch::Tensor& onehot) {
  return torch::einsum("bnd,bnhw->bdhw", {codes, onehot});
}

namespace {

TensorEntry to_entry(const std::string& name, const torch::Tensor& t) {
  auto c = t.detach().contiguous().cpu();
  TensorEntry e;
  e.name = name;
  e.dtype = c.scalar_type() == torch::kFloat64 ? "f64" : "f32";
  if (c.scalar_type() != torch::kFloat64 && c.scalar_type() != torch::kFloat32) c = c.to(torch::kFloat32);
  for (auto s : c.sizes()) e.shape.push_back(s);
  e.bytes.resize(c.numel() * c.element_size());
  std::memcpy(e.bytes.data(), c.data_ptr(), e.bytes.size());
  return e;
}

}  // namespace

void export_module(const torch::nn::Module& module, const std::string& prefix, CheckpointFile& file) {
  for (const auto& p : module.named_parameters(true)) file.tensors.push_back(to_entry(prefix + p.key(), p.value()));
  for (const auto& b : module.named_buffers(true)) file.tensors.push_back(to_entry(prefix + b.key(), b.value()));
}

void import_module(torch::nn::Module& module, const std::string& prefix, const CheckpointFile& file) {
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    const auto& e = file.tensor(prefix + name);
    if (e.numel() != target.numel()) throw std::invalid_argument("checkpoint tensor " + e.name + " has the wrong size");
    auto dtype = e.dtype == "f64" ? torch::kFloat64 : torch::kFloat32;
    auto src = torch::from_blob(const_cast<std::uint8_t*>(e.bytes.data()), target.sizes(), dtype).clone();
    target.copy_(src.to(target.scalar_type()));
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
}

double scheduled_rate(double base, int epoch, int constant, int decay) {
  if (epoch < constant) return base;
  return base * static_cast<double>(constant + decay - epoch) / static_cast<double>(decay + 1);
}

void set_learning_rate(torch::optim::Adam& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

void configure_torch_determinism() {
  static std::once_flag once;
  std::call_once(once, [] {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  });
}

}  // namespace outfit::detail
