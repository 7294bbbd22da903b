#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "forgesem/autograd.hpp"
#include "forgesem/log.hpp"
#include "forgesem/ops.hpp"
#include "forgesem/rng.hpp"

namespace forgesem {

// Label conventions used project-wide: y is binary with fake=0 and real=1;
// S is the method class with real=0 and forgery methods numbered from 1.

struct LossWeights {
    float rho1 = 1.0f;
    float rho2 = 0.3f;
    float rho3 = 0.1f;
    float rho4 = 1.0f;
    float rho5 = 0.05f;
    float rho6 = 0.3f;
    float a = 3.0f;
};

inline void validate_labels(const std::vector<int>& y, const std::vector<int>& s,
                            int methods) {
    FORGESEM_CHECK(y.size() == s.size(), "labels: y and S must align");
    for (std::size_t i = 0; i < y.size(); ++i) {
        FORGESEM_CHECK(y[i] == 0 || y[i] == 1, "labels: y must be binary");
        FORGESEM_CHECK(s[i] >= 0 && s[i] <= methods, "labels: S out of range");
        FORGESEM_CHECK((y[i] == 1) == (s[i] == 0),
                       "labels: S is real exactly when y is real");
    }
}

template <typename T>
ValueT<T> cross_entropy(const ValueT<T>& logits, const std::vector<int>& labels) {
    return ops::cross_entropy_loss(logits, labels);
}

template <typename T>
ValueT<T> l1_loss(const ValueT<T>& target, const ValueT<T>& recon) {
    return ops::l1_loss(target, recon);
}

// ------------------------------------------------------------ contrastive

enum class SemKind { unique, common };

struct TupleIdx {
    int cls;      // anchor class: 0 fake, 1 real
    SemKind kind; // which pooled feature the tuple reads
    int anchor;
    int pos;
    int neg;
};

inline std::string role_name(const TupleIdx& t) {
    return std::string(t.cls == 0 ? "0" : "1") + (t.kind == SemKind::unique ? "u" : "c");
}

struct ContrastiveTuple {
    std::string role;
    std::vector<double> anchor;
    std::vector<double> positive;
    std::vector<double> negative;
};

// max{0, a + d+ - d-} with plain Euclidean distances.
inline double contrastive(const ContrastiveTuple& t, double a) {
    FORGESEM_CHECK(t.anchor.size() == t.positive.size() &&
                       t.anchor.size() == t.negative.size(),
                   "contrastive: vector lengths differ");
    double dp = 0.0, dn = 0.0;
    for (std::size_t i = 0; i < t.anchor.size(); ++i) {
        const double ep = t.anchor[i] - t.positive[i];
        const double en = t.anchor[i] - t.negative[i];
        dp += ep * ep;
        dn += en * en;
    }
    const double v = a + std::sqrt(dp) - std::sqrt(dn);
    return v > 0.0 ? v : 0.0;
}

// One tuple per (anchor, feature kind), roles ordered 0u, 0c, 1u, 1c.
// Real anchors draw positives from the other reals and negatives from the
// fakes; fake anchors draw positives from same-method fakes and negatives
// from the reals. Anchors whose candidate pool is empty are skipped.
inline std::vector<TupleIdx> sample_tuples(const std::vector<int>& y,
                                           const std::vector<int>& s, Pcg32& rng) {
    const int n = static_cast<int>(y.size());
    FORGESEM_CHECK(s.size() == y.size(), "sample_tuples: y and S must align");
    std::vector<TupleIdx> out;
    for (int cls : {0, 1}) {
        for (SemKind kind : {SemKind::unique, SemKind::common}) {
            for (int a = 0; a < n; ++a) {
                if (y[static_cast<std::size_t>(a)] != cls) continue;
                std::vector<int> pos, neg;
                for (int j = 0; j < n; ++j) {
                    if (j == a) continue;
                    const bool same_class = y[static_cast<std::size_t>(j)] == cls;
                    if (cls == 1) {
                        if (same_class) pos.push_back(j);
                        else neg.push_back(j);
                    } else {
                        if (same_class &&
                            s[static_cast<std::size_t>(j)] == s[static_cast<std::size_t>(a)])
                            pos.push_back(j);
                        else if (!same_class)
                            neg.push_back(j);
                    }
                }
                if (pos.empty() || neg.empty()) {
                    log_debug("sample_tuples: skipping anchor " + std::to_string(a) +
                              " (no candidates)");
                    continue;
                }
                TupleIdx t;
                t.cls = cls;
                t.kind = kind;
                t.anchor = a;
                t.pos = pos[rng.uniform_int(static_cast<std::uint32_t>(pos.size()))];
                t.neg = neg[rng.uniform_int(static_cast<std::uint32_t>(neg.size()))];
                out.push_back(t);
            }
        }
    }
    return out;
}

// Batch contrastive loss: mean hinge over the sampled tuples, reading
// unique-kind tuples from pooled_u and common-kind from pooled_c (both NxF).
template <typename T>
ValueT<T> contrastive_batch(const ValueT<T>& pooled_u, const ValueT<T>& pooled_c,
                            const std::vector<TupleIdx>& tuples, T margin) {
    FORGESEM_CHECK(pooled_u->value.rank() == 2 && pooled_c->value.rank() == 2,
                   "contrastive_batch: pooled features must be NxF");
    if (tuples.empty()) {
        log_warn("contrastive_batch: no tuples sampled, loss is 0");
        return make_leaf<T>(TensorT<T>::scalar(T(0)), false);
    }
    ValueT<T> acc;
    for (SemKind kind : {SemKind::unique, SemKind::common}) {
        std::vector<int> ai, pi, ni;
        for (const auto& t : tuples) {
            if (t.kind != kind) continue;
            ai.push_back(t.anchor);
            pi.push_back(t.pos);
            ni.push_back(t.neg);
        }
        if (ai.empty()) continue;
        const ValueT<T>& pooled = kind == SemKind::unique ? pooled_u : pooled_c;
        auto an = ops::gather_rows(pooled, ai);
        auto dp = ops::pairwise_l2(an, ops::gather_rows(pooled, pi));
        auto dn = ops::pairwise_l2(an, ops::gather_rows(pooled, ni));
        auto hinge = ops::relu(ops::add_const(ops::sub(dp, dn), margin));
        auto sum = ops::sum_all(hinge);
        acc = acc ? ops::add(acc, sum) : sum;
    }
    return ops::scale(acc, T(1) / static_cast<T>(tuples.size()));
}

// ----------------------------------------------------------------- totals

// Averages the four reconstruction terms (two self, two cross).
template <typename T>
ValueT<T> recon_average(const std::vector<ValueT<T>>& terms) {
    FORGESEM_CHECK(terms.size() == 4, "recon_average: expected four terms");
    const T q = T(0.25);
    return ops::weighted_sum<T>(terms, {q, q, q, q});
}

template <typename T>
ValueT<T> total_stage1(const ValueT<T>& l_cls, const ValueT<T>& l_rec,
                       const LossWeights& w) {
    return ops::weighted_sum<T>({l_cls, l_rec},
                                {static_cast<T>(w.rho1), static_cast<T>(w.rho2)});
}

template <typename T>
ValueT<T> total_stage2(const ValueT<T>& l_cls1, const ValueT<T>& l_cls2,
                       const ValueT<T>& l_con, const ValueT<T>& l_rec,
                       const LossWeights& w) {
    return ops::weighted_sum<T>(
        {l_cls1, l_cls2, l_con, l_rec},
        {static_cast<T>(w.rho3), static_cast<T>(w.rho4), static_cast<T>(w.rho5),
         static_cast<T>(w.rho6)});
}

} // namespace forgesem
