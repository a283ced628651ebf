#pragma once

#include <deque>
#include <vector>

#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

namespace pretext::contrastive {

// <a,b> / (|a||b|), eps-guarded against zero vectors.
double cosine_sim(const Tensor& a, const Tensor& b, double eps = 1e-12);

// -log softmax(<q,k+>/t) against the positive plus the given negatives.
// q: [d], k_pos: [d], k_negs: [m,d] (m may be 0, which gives loss 0).
// Inputs are assumed L2-normalized by the caller; differentiable wherever the
// operands carry grad.
Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& k_negs,
                double temperature);

// Batched: q [B,d], k_pos [B,d]; negatives either shared [M,d] or per-query
// [B,M,d]. Mean of per-query losses.
Tensor info_nce_batch(const Tensor& q, const Tensor& k_pos, const Tensor& k_negs,
                      double temperature);

// 2 - 2 <q^, z^>; callers pass z detached (stop-gradient contract). Batched
// inputs [B,d] give the mean.
Tensor byol_loss(const Tensor& q, const Tensor& z);

// Per-dataset-index store of unit-norm embeddings.
class MemoryBank {
public:
    MemoryBank(int64_t n, int64_t dim, uint64_t seed, DType dtype = DType::f32);

    int64_t size() const { return n_; }
    int64_t dim() const { return dim_; }

    Tensor lookup(int64_t idx) const;               // [d], constant
    Tensor sample_negatives(int64_t exclude_idx, int64_t m_neg, Rng& rng) const;  // [m,d]
    // row <- l2_normalize(m_b * row + (1 - m_b) * v)
    void update(int64_t idx, const Tensor& v, double m_b);

    double row_norm(int64_t idx) const;

private:
    int64_t n_, dim_;
    DType dtype_;
    std::vector<double> rows_;  // n x dim
};

// Fixed-capacity FIFO of unit-norm embeddings (oldest first).
class NegativeQueue {
public:
    explicit NegativeQueue(int64_t capacity);

    int64_t size() const { return static_cast<int64_t>(entries_.size()); }
    int64_t capacity() const { return capacity_; }

    void push(const Tensor& batch);  // [B,d] or [d]
    // Snapshot [len,d] (oldest -> newest); detached copy, never aliases storage.
    Tensor negatives() const;

private:
    int64_t capacity_;
    int64_t dim_ = 0;
    DType dtype_ = DType::f32;  // follows the first pushed batch
    std::deque<std::vector<double>> entries_;
};

}  // namespace pretext::contrastive
