#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <new>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wordpool/error.hpp"

namespace wordpool::nn {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Eigen picks its vectorized head and tail from the
/// runtime address, so buffers that move between allocations (a restored
/// model, a fresh process) must keep the same alignment to stay bit-exact.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor with value semantics.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape)) {
      throw ConfigError("tensor values (" + std::to_string(data.size()) + ") do not match shape " + shape_str(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return shape.empty() ? 1 : size() / cols(); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

template <class T>
bool all_finite(std::span<const T> xs) {
  for (T x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// --- debug dumps: u64 rank, u64 dims..., f32 payload, all little-endian ----------

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated tensor dump header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline float get_f32(const unsigned char* b) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}
}  // namespace detail

template <class T>
void write_dump(std::ostream& out, const Tensor<T>& t) {
  detail::put_u64(out, t.shape.size());
  for (auto d : t.shape) detail::put_u64(out, d);
  for (T x : t.data) detail::put_f32(out, static_cast<float>(x));
}

inline Tensor<float> read_dump(std::istream& in) {
  const auto rank = detail::get_u64(in);
  if (rank > 16) throw DataError("tensor dump rank too large");
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_u64(in);
  Tensor<float> t(shape);
  std::vector<unsigned char> raw(t.size() * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError("truncated tensor dump payload");
  }
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = detail::get_f32(raw.data() + 4 * i);
  return t;
}

// --- learned parameters -------------------------------------------------------------

template <class T>
struct Parameter {
  std::string name;
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool decay = false;  // receives decoupled weight decay

  std::size_t size() const { return value.size(); }
};

/// Owns every learned tensor of a model in declaration order. Indices handed
/// out by `add` stay valid for the store's lifetime.
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, Shape shape, bool decay = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Parameter<T> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.value.assign(numel(p.shape), T(0));
    p.grad.assign(p.value.size(), T(0));
    p.decay = decay;
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace wordpool::nn
