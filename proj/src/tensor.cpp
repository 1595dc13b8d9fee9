#include "recon_ood/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "recon_ood/errors.hpp"

namespace recon_ood {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix literal has no rows");
  const std::size_t ncols = rows.begin()->size();
  std::vector<T> data;
  data.reserve(rows.size() * ncols);
  for (const auto& row : rows) {
    if (row.size() != ncols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor({rows.size(), ncols}, std::move(data));
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[0];
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[1];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void gemm_accumulate(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
                     std::size_t k, std::size_t n, bool transpose_a, bool transpose_b) {
  if (!transpose_a && !transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* orow = out.data() + i * n;
      const T* arow = a.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    // b is stored n×k.
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a.data() + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b.data() + j * k;
        T acc{0};
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        out[i * n + j] += acc;
      }
    }
  } else if (transpose_a && !transpose_b) {
    // a is stored k×m.
    for (std::size_t p = 0; p < k; ++p) {
      const T* acol = a.data() + p * m;
      const T* brow = b.data() + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = acol[i];
        T* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc{0};
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        out[i * n + j] += acc;
      }
    }
  }
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  BasicTensor<T> out({a.dim(0), b.dim(1)});
  gemm_accumulate<T>(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1), false, false);
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> matmul(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> matmul(const BasicTensor<double>&, const BasicTensor<double>&);
template void gemm_accumulate<float>(std::span<const float>, std::span<const float>, std::span<float>,
                                     std::size_t, std::size_t, std::size_t, bool, bool);
template void gemm_accumulate<double>(std::span<const double>, std::span<const double>,
                                      std::span<double>, std::size_t, std::size_t, std::size_t, bool,
                                      bool);

}  // namespace recon_ood
