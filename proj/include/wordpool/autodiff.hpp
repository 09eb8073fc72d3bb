#pragma once

// Reverse-mode automatic differentiation over a recorded tape of 2-D
// row-major matrices. Every op checks its forward output for NaN/Inf.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wordpool/error.hpp"
#include "wordpool/tensor.hpp"

namespace wordpool::nn {

/// Boolean [queries x keys] matrix of allowed attention edges.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys) : q_(queries), k_(keys), bits_(queries * keys, 0) {}

  static AttentionMask full(std::size_t n) {
    AttentionMask m(n, n);
    std::fill(m.bits_.begin(), m.bits_.end(), 1);
    return m;
  }

  static AttentionMask causal(std::size_t n) {
    AttentionMask m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) m.set(i, j);
    }
    return m;
  }

  /// Causal at group granularity: a row in group g sees every row of groups <= g.
  static AttentionMask group_causal(std::span<const std::size_t> group_sizes) {
    std::size_t n = 0;
    for (auto g : group_sizes) n += g;
    AttentionMask m(n, n);
    std::size_t start = 0;
    for (auto g : group_sizes) {
      for (std::size_t i = start; i < start + g; ++i) {
        for (std::size_t j = 0; j < start + g; ++j) m.set(i, j);
      }
      start += g;
    }
    return m;
  }

  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * k_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool allow = true) { bits_[i * k_ + j] = allow ? 1 : 0; }
  std::size_t queries() const { return q_; }
  std::size_t keys() const { return k_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  bool is_causal() const {
    for (std::size_t i = 0; i < q_; ++i) {
      for (std::size_t j = i + 1; j < k_; ++j) {
        if ((*this)(i, j)) return false;
      }
    }
    return true;
  }

  /// Every query row must allow at least one key.
  void validate() const {
    for (std::size_t i = 0; i < q_; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < k_ && !any; ++j) any = (*this)(i, j);
      if (!any) throw ConfigError("attention mask row " + std::to_string(i) + " allows no key");
    }
  }

 private:
  std::size_t q_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Square self-attention block over rows [offset, offset + mask.queries()).
struct AttentionBlock {
  std::size_t offset = 0;
  AttentionMask mask;
};

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

template <class T>
class Tape {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Buffer<T> own;
    T* val = nullptr;
    Buffer<T> gown;
    T* grad = nullptr;
    bool needs_grad = false;
    bool external_grad = false;
    std::function<void()> back;
  };

 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }
  std::span<const T> value(Var v) const { return {node(v).val, node(v).rows * node(v).cols}; }
  std::span<const T> grad(Var v) const {
    const auto& n = node(v);
    if (!n.grad) throw ConfigError("gradient requested for a node that does not require grad");
    return {n.grad, n.rows * n.cols};
  }
  T scalar(Var v) const {
    if (node(v).rows * node(v).cols != 1) throw ConfigError("scalar() on non-scalar node");
    return node(v).val[0];
  }

  // --- leaves ---------------------------------------------------------------

  Var input(std::size_t rows, std::size_t cols, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != rows * cols) throw ConfigError("input: value count does not match shape");
    auto [v, n] = make(rows, cols, false, false);
    n.own.assign(values.begin(), values.end());
    n.val = n.own.data();
    n.needs_grad = requires_grad && record_;
    check_finite(n, "input");
    return v;
  }

  Var input(const Tensor<T>& t, bool requires_grad = false) {
    return input(t.rows(), t.cols(), t.data, requires_grad);
  }

  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  Var param(Parameter<T>& p) {
    const std::size_t cols = p.shape.empty() ? 1 : p.shape.back();
    auto [v, n] = make(p.size() / cols, cols, false, false);
    n.val = p.value.data();
    if (record_) {
      n.needs_grad = true;
      n.external_grad = true;
      n.grad = p.grad.data();
    }
    return v;
  }

  // --- ops ------------------------------------------------------------------

  Var matmul(Var a, Var b) {
    check(cols(a) == rows(b), "matmul: inner dimensions differ");
    auto [v, out] = make(rows(a), cols(b), needs(a) || needs(b));
    out_map(v).noalias() = cmap(a) * cmap(b);
    finish(v, "matmul", [this, a, b, v] {
      if (needs(a)) gmap(a).noalias() += cgmap(v) * cmap(b).transpose();
      if (needs(b)) gmap(b).noalias() += cmap(a).transpose() * cgmap(v);
    });
    return v;
  }

  /// x W + b with W [in x out] and b [out].
  Var linear(Var x, Var w, Var b) {
    check(cols(x) == rows(w), "linear: input width does not match weight rows");
    check(rows(b) * cols(b) == cols(w), "linear: bias size does not match weight columns");
    auto [v, out] = make(rows(x), cols(w), needs(x) || needs(w) || needs(b));
    auto y = out_map(v);
    y.noalias() = cmap(x) * cmap(w);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(node(b).val, static_cast<Eigen::Index>(cols(w)));
    y.rowwise() += bias;
    finish(v, "linear", [this, x, w, b, v] {
      if (needs(x)) gmap(x).noalias() += cgmap(v) * cmap(w).transpose();
      if (needs(w)) gmap(w).noalias() += cmap(x).transpose() * cgmap(v);
      if (needs(b)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(node(b).grad, static_cast<Eigen::Index>(cols(w)));
        gb += cgmap(v).colwise().sum();
      }
    });
    return v;
  }

  Var add(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "add: shape mismatch");
    auto [v, out] = make(rows(a), cols(a), needs(a) || needs(b));
    const std::size_t n = rows(a) * cols(a);
    const T* pa = node(a).val;
    const T* pb = node(b).val;
    for (std::size_t i = 0; i < n; ++i) out.val[i] = pa[i] + pb[i];
    finish(v, "add", [this, a, b, v, n] {
      const T* g = node(v).grad;
      if (needs(a)) axpy(node(a).grad, g, n);
      if (needs(b)) axpy(node(b).grad, g, n);
    });
    return v;
  }

  Var mul(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "mul: shape mismatch");
    auto [v, out] = make(rows(a), cols(a), needs(a) || needs(b));
    const std::size_t n = rows(a) * cols(a);
    for (std::size_t i = 0; i < n; ++i) out.val[i] = node(a).val[i] * node(b).val[i];
    finish(v, "mul", [this, a, b, v, n] {
      const T* g = node(v).grad;
      if (needs(a)) {
        for (std::size_t i = 0; i < n; ++i) node(a).grad[i] += g[i] * node(b).val[i];
      }
      if (needs(b)) {
        for (std::size_t i = 0; i < n; ++i) node(b).grad[i] += g[i] * node(a).val[i];
      }
    });
    return v;
  }

  Var scale(Var a, T s) {
    auto [v, out] = make(rows(a), cols(a), needs(a));
    const std::size_t n = rows(a) * cols(a);
    for (std::size_t i = 0; i < n; ++i) out.val[i] = node(a).val[i] * s;
    finish(v, "scale", [this, a, v, n, s] {
      if (!needs(a)) return;
      for (std::size_t i = 0; i < n; ++i) node(a).grad[i] += node(v).grad[i] * s;
    });
    return v;
  }

  Var sum(Var a) {
    auto [v, out] = make(1, 1, needs(a));
    const std::size_t n = rows(a) * cols(a);
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += node(a).val[i];
    out.val[0] = acc;
    finish(v, "sum", [this, a, v, n] {
      if (!needs(a)) return;
      const T g = node(v).grad[0];
      for (std::size_t i = 0; i < n; ++i) node(a).grad[i] += g;
    });
    return v;
  }

  /// Row-wise layer normalization with learned gain and bias of width cols(x).
  Var layernorm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const std::size_t r = rows(x);
    const std::size_t c = cols(x);
    check(rows(gain) * cols(gain) == c && rows(bias) * cols(bias) == c, "layernorm: parameter width mismatch");
    auto [v, out] = make(r, c, needs(x) || needs(gain) || needs(bias));
    auto xhat = std::make_shared<std::vector<T>>(r * c);
    auto rstd = std::make_shared<std::vector<T>>(r);
    const T* px = node(x).val;
    const T* g = node(gain).val;
    const T* b = node(bias).val;
    for (std::size_t i = 0; i < r; ++i) {
      const T* row = px + i * c;
      T mean = 0;
      for (std::size_t j = 0; j < c; ++j) mean += row[j];
      mean /= static_cast<T>(c);
      T var = 0;
      for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<T>(c);
      const T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[i] = rs;
      for (std::size_t j = 0; j < c; ++j) {
        const T xh = (row[j] - mean) * rs;
        (*xhat)[i * c + j] = xh;
        out.val[i * c + j] = xh * g[j] + b[j];
      }
    }
    finish(v, "layernorm", [this, x, gain, bias, v, r, c, xhat, rstd] {
      const T* gy = node(v).grad;
      const T* g = node(gain).val;
      for (std::size_t i = 0; i < r; ++i) {
        const T* gyr = gy + i * c;
        const T* xh = xhat->data() + i * c;
        if (needs(gain) || needs(bias)) {
          for (std::size_t j = 0; j < c; ++j) {
            if (needs(gain)) node(gain).grad[j] += gyr[j] * xh[j];
            if (needs(bias)) node(bias).grad[j] += gyr[j];
          }
        }
        if (needs(x)) {
          T mean_d = 0;
          T mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T d = gyr[j] * g[j];
            mean_d += d;
            mean_dx += d * xh[j];
          }
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          T* gx = node(x).grad + i * c;
          for (std::size_t j = 0; j < c; ++j) {
            gx[j] += (*rstd)[i] * (gyr[j] * g[j] - mean_d - xh[j] * mean_dx);
          }
        }
      }
    });
    return v;
  }

  /// tanh-approximated GELU.
  Var gelu(Var x) {
    const std::size_t n = rows(x) * cols(x);
    auto [v, out] = make(rows(x), cols(x), needs(x));
    constexpr T k = T(0.7978845608028654);  // sqrt(2 / pi)
    constexpr T a = T(0.044715);
    const T* px = node(x).val;
    for (std::size_t i = 0; i < n; ++i) {
      const T xi = px[i];
      out.val[i] = T(0.5) * xi * (T(1) + std::tanh(k * (xi + a * xi * xi * xi)));
    }
    finish(v, "gelu", [this, x, v, n] {
      if (!needs(x)) return;
      const T* px = node(x).val;
      const T* gy = node(v).grad;
      T* gx = node(x).grad;
      for (std::size_t i = 0; i < n; ++i) {
        const T xi = px[i];
        const T t = std::tanh(k * (xi + a * xi * xi * xi));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * xi * (T(1) - t * t) * k * (T(1) + T(3) * a * xi * xi);
        gx[i] += gy[i] * d;
      }
    });
    return v;
  }

  /// Rows of `table` selected by `ids`.
  Var embedding(Var table, std::span<const std::int32_t> ids) {
    std::vector<std::size_t> idx(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < rows(table), "embedding: id out of range");
      idx[i] = static_cast<std::size_t>(ids[i]);
    }
    return gather_rows(table, std::move(idx), "embedding");
  }

  Var gather_rows(Var x, std::vector<std::size_t> idx, const char* name = "gather_rows") {
    const std::size_t c = cols(x);
    for (auto i : idx) check(i < rows(x), "gather_rows: row index out of range");
    auto [v, out] = make(idx.size(), c, needs(x));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(node(x).val + idx[r] * c, c, out.val + r * c);
    }
    auto shared_idx = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    finish(v, name, [this, x, v, c, shared_idx] {
      if (!needs(x)) return;
      const T* gy = node(v).grad;
      T* gx = node(x).grad;
      for (std::size_t r = 0; r < shared_idx->size(); ++r) axpy(gx + (*shared_idx)[r] * c, gy + r * c, c);
    });
    return v;
  }

  Var concat_rows(std::span<const Var> parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    const std::size_t c = cols(parts[0]);
    std::size_t r = 0;
    bool any = false;
    for (Var p : parts) {
      check(cols(p) == c, "concat_rows: column mismatch");
      r += rows(p);
      any = any || needs(p);
    }
    auto [v, out] = make(r, c, any);
    std::size_t at = 0;
    for (Var p : parts) {
      std::copy_n(node(p).val, rows(p) * c, out.val + at);
      at += rows(p) * c;
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    finish(v, "concat_rows", [this, ps, v, c] {
      std::size_t at = 0;
      for (Var p : ps) {
        const std::size_t n = rows(p) * c;
        if (needs(p)) axpy(node(p).grad, node(v).grad + at, n);
        at += n;
      }
    });
    return v;
  }

  /// Multi-head scaled dot-product attention restricted to the allowed edges
  /// of each block; disallowed keys receive -inf before the softmax. q, k and
  /// v are [n x D]; every row must belong to exactly one block.
  Var masked_attention(Var q, Var k, Var v, std::span<const AttentionBlock> blocks, std::size_t heads) {
    const std::size_t n = rows(q);
    const std::size_t d = cols(q);
    check(rows(k) == n && rows(v) == n && cols(k) == d && cols(v) == d, "attention: q/k/v shape mismatch");
    check(heads > 0 && d % heads == 0, "attention: head count must divide model width");
    std::vector<std::uint8_t> covered(n, 0);
    std::size_t prob_size = 0;
    std::vector<std::size_t> prob_offset(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& blk = blocks[b];
      const std::size_t len = blk.mask.queries();
      check(blk.mask.keys() == len, "attention: block masks must be square");
      check(blk.offset + len <= n, "attention: block exceeds sequence");
      blk.mask.validate();
      for (std::size_t i = blk.offset; i < blk.offset + len; ++i) {
        check(!covered[i], "attention: overlapping blocks");
        covered[i] = 1;
      }
      prob_offset[b] = prob_size;
      prob_size += heads * len * len;
    }
    for (auto c : covered) check(c != 0, "attention: row not covered by any block");

    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    auto [out_v, out] = make(n, d, needs(q) || needs(k) || needs(v));
    std::fill_n(out.val, n * d, T(0));
    auto probs = std::make_shared<std::vector<T>>(prob_size, T(0));
    auto blks = std::make_shared<std::vector<AttentionBlock>>(blocks.begin(), blocks.end());
    const T* pq = node(q).val;
    const T* pk = node(k).val;
    const T* pv = node(v).val;
    for (std::size_t b = 0; b < blks->size(); ++b) {
      const auto& blk = (*blks)[b];
      const std::size_t len = blk.mask.queries();
      const std::size_t o = blk.offset;
      for (std::size_t h = 0; h < heads; ++h) {
        T* P = probs->data() + prob_offset[b] + h * len * len;
        for (std::size_t i = 0; i < len; ++i) {
          const T* qi = pq + (o + i) * d + h * dh;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < len; ++j) {
            if (!blk.mask(i, j)) continue;
            const T* kj = pk + (o + j) * d + h * dh;
            T s = 0;
            for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
            s *= scale;
            P[i * len + j] = s;
            mx = std::max(mx, s);
          }
          T z = 0;
          for (std::size_t j = 0; j < len; ++j) {
            if (!blk.mask(i, j)) continue;
            const T e = std::exp(P[i * len + j] - mx);
            P[i * len + j] = e;
            z += e;
          }
          T* oi = out.val + (o + i) * d + h * dh;
          for (std::size_t j = 0; j < len; ++j) {
            if (!blk.mask(i, j)) continue;
            const T p = P[i * len + j] / z;
            P[i * len + j] = p;
            const T* vj = pv + (o + j) * d + h * dh;
            for (std::size_t t = 0; t < dh; ++t) oi[t] += p * vj[t];
          }
        }
      }
    }
    finish(out_v, "masked_attention", [this, q, k, v, out_v, d, dh, heads, scale, probs, blks, prob_offset] {
      const T* pq = node(q).val;
      const T* pk = node(k).val;
      const T* pv = node(v).val;
      const T* go = node(out_v).grad;
      T* gq = needs(q) ? node(q).grad : nullptr;
      T* gk = needs(k) ? node(k).grad : nullptr;
      T* gv = needs(v) ? node(v).grad : nullptr;
      std::vector<T> dp;
      for (std::size_t b = 0; b < blks->size(); ++b) {
        const auto& blk = (*blks)[b];
        const std::size_t len = blk.mask.queries();
        const std::size_t o = blk.offset;
        dp.assign(len, T(0));
        for (std::size_t h = 0; h < heads; ++h) {
          const T* P = probs->data() + prob_offset[b] + h * len * len;
          for (std::size_t i = 0; i < len; ++i) {
            const T* goi = go + (o + i) * d + h * dh;
            T row = 0;
            for (std::size_t j = 0; j < len; ++j) {
              if (!blk.mask(i, j)) continue;
              const T* vj = pv + (o + j) * d + h * dh;
              T s = 0;
              for (std::size_t t = 0; t < dh; ++t) s += goi[t] * vj[t];
              dp[j] = s;
              row += P[i * len + j] * s;
              if (gv) {
                T* gvj = gv + (o + j) * d + h * dh;
                const T p = P[i * len + j];
                for (std::size_t t = 0; t < dh; ++t) gvj[t] += p * goi[t];
              }
            }
            const T* qi = pq + (o + i) * d + h * dh;
            T* gqi = gq ? gq + (o + i) * d + h * dh : nullptr;
            for (std::size_t j = 0; j < len; ++j) {
              if (!blk.mask(i, j)) continue;
              const T ds = P[i * len + j] * (dp[j] - row) * scale;
              const T* kj = pk + (o + j) * d + h * dh;
              if (gqi) {
                for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds * kj[t];
              }
              if (gk) {
                T* gkj = gk + (o + j) * d + h * dh;
                for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds * qi[t];
              }
            }
          }
        }
      }
    });
    return out_v;
  }

  Var masked_attention(Var q, Var k, Var v, const AttentionMask& mask, std::size_t heads) {
    const AttentionBlock blk{0, mask};
    return masked_attention(q, k, v, std::span<const AttentionBlock>(&blk, 1), heads);
  }

  /// Mean negative log-likelihood over rows whose target differs from
  /// `ignore_id`.
  Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::int32_t ignore_id) {
    const std::size_t r = rows(logits);
    const std::size_t c = cols(logits);
    check(targets.size() == r, "cross_entropy: one target per row required");
    std::size_t count = 0;
    for (auto t : targets) {
      if (t == ignore_id) continue;
      check(t >= 0 && static_cast<std::size_t>(t) < c, "cross_entropy: target out of range");
      ++count;
    }
    if (count == 0) throw DataError("cross_entropy: every position is ignored");
    auto [v, out] = make(1, 1, needs(logits));
    auto soft = std::make_shared<std::vector<T>>(r * c);
    auto tg = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    const T* pl = node(logits).val;
    T total = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const T* row = pl + i * c;
      T mx = *std::max_element(row, row + c);
      T z = 0;
      for (std::size_t j = 0; j < c; ++j) {
        const T e = std::exp(row[j] - mx);
        (*soft)[i * c + j] = e;
        z += e;
      }
      for (std::size_t j = 0; j < c; ++j) (*soft)[i * c + j] /= z;
      if ((*tg)[i] != ignore_id) total += std::log(z) + mx - row[(*tg)[i]];
    }
    out.val[0] = total / static_cast<T>(count);
    finish(v, "cross_entropy", [this, logits, v, r, c, soft, tg, ignore_id, count] {
      if (!needs(logits)) return;
      const T g = node(v).grad[0] / static_cast<T>(count);
      T* gl = node(logits).grad;
      for (std::size_t i = 0; i < r; ++i) {
        if ((*tg)[i] == ignore_id) continue;
        for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * (*soft)[i * c + j];
        gl[i * c + (*tg)[i]] -= g;
      }
    });
    return v;
  }

  // --- backward -----------------------------------------------------------------

  void backward(Var loss) {
    if (!record_) throw ConfigError("backward on a non-recording tape");
    if (node(loss).rows * node(loss).cols != 1) throw ConfigError("backward: loss must be a scalar");
    for (auto& n : nodes_) {
      if (n->needs_grad && !n->external_grad) {
        n->gown.assign(n->rows * n->cols, T(0));
        n->grad = n->gown.data();
      }
    }
    if (!node(loss).needs_grad) return;
    node(loss).grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->needs_grad && (*it)->back) (*it)->back();
    }
  }

 private:
  Node& node(Var v) { return *nodes_.at(v.id); }
  const Node& node(Var v) const { return *nodes_.at(v.id); }
  bool needs(Var v) const { return node(v).needs_grad; }

  std::pair<Var, Node&> make(std::size_t rows, std::size_t cols, bool needs_grad, bool allocate = true) {
    auto n = std::make_unique<Node>();
    n->rows = rows;
    n->cols = cols;
    n->needs_grad = needs_grad && record_;
    Var v{static_cast<std::uint32_t>(nodes_.size())};
    nodes_.push_back(std::move(n));
    Node& ref = *nodes_.back();
    if (allocate) {
      ref.own.resize(rows * cols);
      ref.val = ref.own.data();
    }
    return {v, ref};
  }

  void finish(Var v, const char* op, std::function<void()> back) {
    check_finite(node(v), op);
    if (node(v).needs_grad) node(v).back = std::move(back);
  }

  static void check_finite(const Node& n, const char* op) {
    const std::size_t sz = n.rows * n.cols;
    for (std::size_t i = 0; i < sz; ++i) {
      if (!std::isfinite(n.val[i])) {
        throw NonFiniteError(std::string("non-finite value produced by ") + op + " at element " + std::to_string(i));
      }
    }
  }

  static void check(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  }

  static void axpy(T* dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  MapM out_map(Var v) {
    return MapM(node(v).val, static_cast<Eigen::Index>(node(v).rows), static_cast<Eigen::Index>(node(v).cols));
  }
  CMapM cmap(Var v) const {
    return CMapM(node(v).val, static_cast<Eigen::Index>(node(v).rows), static_cast<Eigen::Index>(node(v).cols));
  }
  MapM gmap(Var v) {
    return MapM(node(v).grad, static_cast<Eigen::Index>(node(v).rows), static_cast<Eigen::Index>(node(v).cols));
  }
  CMapM cgmap(Var v) const {
    return CMapM(node(v).grad, static_cast<Eigen::Index>(node(v).rows), static_cast<Eigen::Index>(node(v).cols));
  }

  bool record_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

/// Index of the largest entry of each row of a [rows x cols] buffer (first on ties).
template <class T>
std::vector<std::int32_t> argmax_rows(std::span<const T> values, std::size_t cols) {
  std::vector<std::int32_t> out(values.size() / cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* row = values.data() + i * cols;
    out[i] = static_cast<std::int32_t>(std::max_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace wordpool::nn
