#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pretext/image.hpp"

namespace pretext::img {

int hamming_distance(const std::vector<int>& a, const std::vector<int>& b) {
    int d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

namespace {

int64_t factorial(int n) {
    int64_t f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

std::vector<std::vector<int>> all_permutations(int n) {
    std::vector<int> base(static_cast<size_t>(n));
    std::iota(base.begin(), base.end(), 0);
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(factorial(n)));
    do {
        out.push_back(base);
    } while (std::next_permutation(base.begin(), base.end()));
    return out;
}

std::vector<std::vector<int>> random_permutations(int n, int64_t count, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x7065726d));
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(count));
    std::vector<int> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < count; ++i) {
        std::iota(p.begin(), p.end(), 0);
        rng.shuffle(p);
        out.push_back(p);
    }
    return out;
}

}  // namespace

PermutationTable build_permutation_set(int n, int count, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    if (n <= 20 && static_cast<int64_t>(count) > factorial(n))
        throw std::invalid_argument("count exceeds n!");

    // Candidate pool: exhaustive (lexicographic) when n! fits, random otherwise.
    std::vector<std::vector<int>> pool;
    if (factorial(std::min(n, 20)) <= 1'000'000 && n <= 20) {
        pool = all_permutations(n);
    } else {
        pool = random_permutations(n, static_cast<int64_t>(count) * 1000, seed);
    }

    std::vector<int> identity(static_cast<size_t>(n));
    std::iota(identity.begin(), identity.end(), 0);

    PermutationTable table;
    table.perms.push_back(identity);

    // Greedy farthest point: min distance to selected, tracked incrementally.
    // Pool is in lexicographic order, so the first maximum is the tie-break.
    std::vector<int> min_dist(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        min_dist[i] = hamming_distance(pool[i], identity);

    while (static_cast<int>(table.perms.size()) < count) {
        int best = -1;
        size_t best_idx = 0;
        for (size_t i = 0; i < pool.size(); ++i) {
            if (min_dist[i] > best) {
                best = min_dist[i];
                best_idx = i;
            }
        }
        if (best <= 0) throw std::invalid_argument("candidate pool exhausted");
        table.perms.push_back(pool[best_idx]);
        for (size_t i = 0; i < pool.size(); ++i)
            min_dist[i] = std::min(min_dist[i], hamming_distance(pool[i], pool[best_idx]));
    }

    table.min_pairwise_hamming = std::numeric_limits<int>::max();
    for (size_t i = 0; i < table.perms.size(); ++i)
        for (size_t j = i + 1; j < table.perms.size(); ++j)
            table.min_pairwise_hamming =
                std::min(table.min_pairwise_hamming, hamming_distance(table.perms[i], table.perms[j]));
    if (table.perms.size() < 2) table.min_pairwise_hamming = 0;
    return table;
}

}  // namespace pretext::img
