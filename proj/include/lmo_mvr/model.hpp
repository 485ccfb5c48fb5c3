#ifndef LMO_MVR_MODEL_HPP
#define LMO_MVR_MODEL_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "lmo_mvr/norms.hpp"

namespace lmo_mvr {

struct LayerSpec {
  Index rows = 1;
  Index cols = 1;
  NormKind norm = NormKind::Spectral;
  double radius_scale = 1.0;  // t_i
};

/// Product space S_1 x ... x S_p, one LayerSpec per block.
struct ModelShape {
  std::vector<LayerSpec> layers;

  std::size_t size() const { return layers.size(); }
  const LayerSpec& operator[](std::size_t i) const { return layers[i]; }

  void validate() const {
    if (layers.empty()) throw InvalidInput("ModelShape: at least one layer is required");
    for (const auto& l : layers) {
      if (l.rows < 1 || l.cols < 1) throw InvalidInput("ModelShape: layer dimensions must be positive");
      if (!(l.radius_scale > 0.0)) throw InvalidInput("ModelShape: radius multiplier t_i must be positive");
    }
  }
};

/// One dense block per layer.
using ParamVector = std::vector<Matrix>;

inline ParamVector zeros(const ModelShape& shape) {
  ParamVector out;
  out.reserve(shape.size());
  for (const auto& l : shape.layers) out.push_back(Matrix::Zero(l.rows, l.cols));
  return out;
}

inline bool matches(const ModelShape& shape, const ParamVector& x) {
  if (x.size() != shape.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != shape[i].rows || x[i].cols() != shape[i].cols) return false;
  }
  return true;
}

inline void require_shape(const ModelShape& shape, const ParamVector& x, const char* what) {
  if (!matches(shape, x)) throw InvalidInput(std::string(what) + ": parameter shape mismatch");
}

inline bool all_finite(const ParamVector& x) {
  for (const auto& b : x) {
    if (!b.allFinite()) return false;
  }
  return true;
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector operator*(double s, const ParamVector& a) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

/// Largest absolute entry difference over all blocks.
inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() == 0) continue;
    m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  }
  return m;
}

inline double squared_euclidean(const ParamVector& a) {
  double s = 0.0;
  for (const auto& b : a) s += b.squaredNorm();
  return s;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_MODEL_HPP
