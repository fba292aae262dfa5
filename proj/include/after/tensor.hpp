#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace after {

// Dense row-major 2-D tensor of doubles. Gradient storage lives alongside
// the values and is allocated once requires_grad is set; ops accumulate into
// it, callers zero it between optimizer steps.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(int r, int c, bool rg = false) : rows(r), cols(c), requires_grad(rg) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
    data.assign(static_cast<std::size_t>(r) * c, 0.0);
    if (rg) grad.assign(data.size(), 0.0);
  }

  std::size_t size() const { return data.size(); }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg && grad.size() != data.size()) grad.assign(data.size(), 0.0);
    if (!rg) grad.clear();
  }

  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(int rows, int cols, bool requires_grad = false) {
  return std::make_shared<Tensor>(rows, cols, requires_grad);
}

inline TensorPtr make_tensor(int rows, int cols, std::vector<double> values,
                             bool requires_grad = false) {
  auto t = std::make_shared<Tensor>(rows, cols, requires_grad);
  if (values.size() != t->data.size())
    throw std::invalid_argument("make_tensor: value count does not match shape");
  t->data = std::move(values);
  return t;
}

}  // namespace after
