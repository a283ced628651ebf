#include "pretext/contrastive.hpp"

#include <cmath>
#include <stdexcept>

namespace pretext::contrastive {

double cosine_sim(const Tensor& a, const Tensor& b, double eps) {
    if (a.numel() != b.numel()) throw std::invalid_argument("cosine_sim length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    auto da = a.data(), db = b.data();
    for (size_t i = 0; i < da.size(); ++i) {
        dot += da[i] * db[i];
        na += da[i] * da[i];
        nb += db[i] * db[i];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), eps);
}

Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& k_negs,
                double temperature) {
    if (q.rank() != 1) throw std::invalid_argument("info_nce expects q of rank 1");
    auto qb = reshape(q, {1, q.dim(0)});
    auto pb = reshape(k_pos, {1, k_pos.dim(0)});
    Tensor negs = k_negs;
    if (negs.defined() && negs.numel() > 0) negs = reshape(negs, {1, negs.dim(0), negs.dim(1)});
    return info_nce_batch(qb, pb, negs, temperature);
}

Tensor info_nce_batch(const Tensor& q, const Tensor& k_pos, const Tensor& k_negs,
                      double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    if (q.rank() != 2 || k_pos.rank() != 2)
        throw std::invalid_argument("info_nce_batch expects [B,d] q and k_pos");
    if (q.shape() != k_pos.shape())
        throw std::invalid_argument("info_nce_batch q/k_pos shape mismatch");
    int64_t batch = q.dim(0), dim = q.dim(1);

    // positive logit per row: sum(q * k+, axis 1) -> [B,1]
    auto pos = reduce_sum(mul(q, k_pos), {1}, true);

    bool have_negs = k_negs.defined() && k_negs.numel() > 0;
    if (!have_negs) {
        // singleton softmax: loss is exactly zero but stays on the tape
        auto logits = mul_scalar(pos, 1.0 / temperature);
        return cross_entropy(reshape(logits, {batch, 1}), std::vector<int64_t>(batch, 0));
    }

    Tensor negs = k_negs;
    if (negs.rank() == 2) {
        // shared negatives [M,d]: q [B,1,d] * negs [M,d] -> [B,M,d]
        if (negs.dim(1) != dim) throw std::invalid_argument("negative dim mismatch");
        auto q3 = reshape(q, {batch, 1, dim});
        auto prods = mul(q3, negs);
        auto neg_logits = reduce_sum(prods, {2}, false);  // [B,M]
        auto logits = mul_scalar(concat({pos, neg_logits}, 1), 1.0 / temperature);
        return cross_entropy(logits, std::vector<int64_t>(batch, 0));
    }
    if (negs.rank() == 3) {
        // per-query negatives [B,M,d]
        if (negs.dim(0) != batch || negs.dim(2) != dim)
            throw std::invalid_argument("negative shape mismatch");
        auto q3 = reshape(q, {batch, 1, dim});
        auto prods = mul(q3, negs);
        auto neg_logits = reduce_sum(prods, {2}, false);  // [B,M]
        auto logits = mul_scalar(concat({pos, neg_logits}, 1), 1.0 / temperature);
        return cross_entropy(logits, std::vector<int64_t>(batch, 0));
    }
    throw std::invalid_argument("negatives must be rank 2 or 3");
}

Tensor byol_loss(const Tensor& q, const Tensor& z) {
    Tensor q2 = q.rank() == 1 ? reshape(q, {1, q.dim(0)}) : q;
    Tensor z2 = z.rank() == 1 ? reshape(z, {1, z.dim(0)}) : z;
    if (q2.shape() != z2.shape()) throw std::invalid_argument("byol_loss shape mismatch");
    auto qn = l2_normalize(q2, 1);
    auto zn = l2_normalize(z2, 1);
    auto cos = reduce_sum(mul(qn, zn), {1}, false);  // [B]
    auto mean_cos = mean_all(cos);
    return add_scalar(mul_scalar(mean_cos, -2.0), 2.0);
}

// --- MemoryBank ------------------------------------------------------------------

MemoryBank::MemoryBank(int64_t n, int64_t dim, uint64_t seed, DType dtype)
    : n_(n), dim_(dim), dtype_(dtype) {
    if (n < 1 || dim < 1) throw std::invalid_argument("bank needs n, dim >= 1");
    rows_.resize(static_cast<size_t>(n * dim));
    Rng rng(mix_seed(seed, 0x62616e6b));
    // iid uniform on the sphere: normalized Gaussian draws
    for (int64_t r = 0; r < n; ++r) {
        double* row = rows_.data() + r * dim;
        double norm_sq = 0.0;
        for (int64_t c = 0; c < dim; ++c) {
            row[c] = rng.normal(0.0, 1.0);
            norm_sq += row[c] * row[c];
        }
        double inv = 1.0 / std::max(std::sqrt(norm_sq), 1e-12);
        for (int64_t c = 0; c < dim; ++c) {
            row[c] *= inv;
            if (dtype_ == DType::f32) row[c] = static_cast<double>(static_cast<float>(row[c]));
        }
    }
}

Tensor MemoryBank::lookup(int64_t idx) const {
    if (idx < 0 || idx >= n_) throw std::invalid_argument("bank index out of range");
    std::vector<double> v(rows_.begin() + idx * dim_, rows_.begin() + (idx + 1) * dim_);
    return Tensor::from_data({dim_}, std::move(v), dtype_);
}

Tensor MemoryBank::sample_negatives(int64_t exclude_idx, int64_t m_neg, Rng& rng) const {
    if (exclude_idx < 0 || exclude_idx >= n_)
        throw std::invalid_argument("bank index out of range");
    if (m_neg > n_ - 1) throw std::invalid_argument("m_neg exceeds bank size - 1");
    // partial Fisher-Yates over indices != exclude_idx
    std::vector<int64_t> pool;
    pool.reserve(static_cast<size_t>(n_ - 1));
    for (int64_t i = 0; i < n_; ++i)
        if (i != exclude_idx) pool.push_back(i);
    std::vector<double> out(static_cast<size_t>(m_neg * dim_));
    for (int64_t k = 0; k < m_neg; ++k) {
        int64_t j = k + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(pool.size() - k)));
        std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
        const double* row = rows_.data() + pool[static_cast<size_t>(k)] * dim_;
        std::copy(row, row + dim_, out.begin() + k * dim_);
    }
    return Tensor::from_data({m_neg, dim_}, std::move(out), dtype_);
}

void MemoryBank::update(int64_t idx, const Tensor& v, double m_b) {
    if (idx < 0 || idx >= n_) throw std::invalid_argument("bank index out of range");
    if (v.numel() != dim_) throw std::invalid_argument("bank update dim mismatch");
    double* row = rows_.data() + idx * dim_;
    auto dv = v.data();
    double norm_sq = 0.0;
    for (int64_t c = 0; c < dim_; ++c) {
        row[c] = m_b * row[c] + (1.0 - m_b) * dv[c];
        norm_sq += row[c] * row[c];
    }
    double inv = 1.0 / std::max(std::sqrt(norm_sq), 1e-12);
    for (int64_t c = 0; c < dim_; ++c) {
        row[c] *= inv;
        if (dtype_ == DType::f32) row[c] = static_cast<double>(static_cast<float>(row[c]));
    }
}

double MemoryBank::row_norm(int64_t idx) const {
    double sq = 0.0;
    const double* row = rows_.data() + idx * dim_;
    for (int64_t c = 0; c < dim_; ++c) sq += row[c] * row[c];
    return std::sqrt(sq);
}

// --- NegativeQueue ------------------------------------------------------------------

NegativeQueue::NegativeQueue(int64_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("queue capacity must be >= 1");
}

void NegativeQueue::push(const Tensor& batch) {
    Tensor b = batch.rank() == 1 ? reshape(batch, {1, batch.dim(0)}) : batch;
    if (b.rank() != 2) throw std::invalid_argument("queue push expects [B,d]");
    if (dim_ == 0) {
        dim_ = b.dim(1);
        dtype_ = b.dtype();
    }
    if (b.dim(1) != dim_) throw std::invalid_argument("queue dim mismatch");
    auto data = b.data();
    for (int64_t r = 0; r < b.dim(0); ++r) {
        entries_.emplace_back(data.begin() + r * dim_, data.begin() + (r + 1) * dim_);
        if (static_cast<int64_t>(entries_.size()) > capacity_) entries_.pop_front();
    }
}

Tensor NegativeQueue::negatives() const {
    if (entries_.empty()) return Tensor();
    std::vector<double> out;
    out.reserve(entries_.size() * static_cast<size_t>(dim_));
    for (const auto& e : entries_) out.insert(out.end(), e.begin(), e.end());
    return Tensor::from_data({static_cast<int64_t>(entries_.size()), dim_}, std::move(out),
                             dtype_);
}

}  // namespace pretext::contrastive
