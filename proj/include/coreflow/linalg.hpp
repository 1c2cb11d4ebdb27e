#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"

namespace coreflow {

// Dense row-major matrix. Templated on the scalar so the few precision-critical
// paths (principal angles) can run the same kernels in long double.
template <class T>
class MatT {
public:
    MatT() = default;
    MatT(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), d_(rows * cols, fill) {}

    static MatT identity(std::size_t n) {
        MatT m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return d_.size(); }

    T& operator()(std::size_t i, std::size_t j) { return d_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return d_[i * cols_ + j]; }

    T* data() { return d_.data(); }
    const T* data() const { return d_.data(); }
    T* row(std::size_t i) { return d_.data() + i * cols_; }
    const T* row(std::size_t i) const { return d_.data() + i * cols_; }

    bool same_shape(const MatT& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (const T& x : d_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    friend bool operator==(const MatT& a, const MatT& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.d_ == b.d_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<T> d_;
};

using Mat = MatT<double>;

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

template <class T>
void require_shape(const MatT<T>& a, std::size_t r, std::size_t c, const char* what) {
    if (a.rows() != r || a.cols() != c)
        throw ShapeMismatch(std::string(what) + ": expected " + detail::shape_str(r, c) +
                            ", got " + detail::shape_str(a.rows(), a.cols()));
}

template <class T>
MatT<T> transpose(const MatT<T>& a) {
    MatT<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// C = A * B, ikj order.
template <class T>
MatT<T> matmul(const MatT<T>& a, const MatT<T>& b) {
    if (a.cols() != b.rows())
        throw ShapeMismatch("matmul: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                            detail::shape_str(b.rows(), b.cols()));
    MatT<T> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const T aik = ai[k];
            const T* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

// C = Aᵀ * B without forming the transpose.
template <class T>
MatT<T> matmul_tn(const MatT<T>& a, const MatT<T>& b) {
    if (a.rows() != b.rows())
        throw ShapeMismatch("matmul_tn: " + detail::shape_str(a.rows(), a.cols()) + "ᵀ * " +
                            detail::shape_str(b.rows(), b.cols()));
    MatT<T> c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const T* ak = a.row(k);
        const T* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T aki = ak[i];
            T* ci = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

// C = A * Bᵀ.
template <class T>
MatT<T> matmul_nt(const MatT<T>& a, const MatT<T>& b) {
    if (a.cols() != b.cols())
        throw ShapeMismatch("matmul_nt: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                            detail::shape_str(b.rows(), b.cols()) + "ᵀ");
    MatT<T> c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const T* bj = b.row(j);
            T s = T(0);
            for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return c;
}

template <class T>
MatT<T> operator+(const MatT<T>& a, const MatT<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("matrix add");
    MatT<T> c = a;
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) += b(i, j);
    return c;
}

template <class T>
MatT<T> operator-(const MatT<T>& a, const MatT<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("matrix sub");
    MatT<T> c = a;
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) -= b(i, j);
    return c;
}

template <class T>
MatT<T> operator*(T s, const MatT<T>& a) {
    MatT<T> c = a;
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) *= s;
    return c;
}

template <class T>
T frob_norm_sq(const MatT<T>& a) {
    T s = T(0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
    return s;
}

template <class T>
T frob_norm(const MatT<T>& a) {
    return std::sqrt(frob_norm_sq(a));
}

template <class T>
T max_abs(const MatT<T>& a) {
    T m = T(0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, static_cast<T>(std::abs(a(i, j))));
    return m;
}

template <class T>
struct QrResultT {
    MatT<T> q;  // m x R, orthonormal columns
    MatT<T> r;  // R x R, upper triangular, nonnegative diagonal
};

using QrResult = QrResultT<double>;

// Thin QR via Householder reflections. The diagonal of R is sign-fixed to be
// nonnegative, which makes the factorization unique and runs byte-reproducible.
// Throws RankDeficient when a pivot norm underflows 1e-12.
template <class T>
QrResultT<T> qr_thin_t(const MatT<T>& a, T pivot_tol = T(1e-12)) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m < n) throw ShapeMismatch("qr_thin: rows < cols (" + detail::shape_str(m, n) + ")");
    MatT<T> work = a;                       // reduced in place to R
    std::vector<std::vector<T>> vs;         // Householder vectors
    vs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        T norm = T(0);
        for (std::size_t i = k; i < m; ++i) norm += work(i, k) * work(i, k);
        norm = std::sqrt(norm);
        if (norm <= pivot_tol)
            throw RankDeficient("qr_thin: column " + std::to_string(k) + " pivot " +
                                std::to_string(static_cast<double>(norm)));
        const T alpha = work(k, k) >= T(0) ? -norm : norm;
        std::vector<T> v(m - k, T(0));
        v[0] = work(k, k) - alpha;
        for (std::size_t i = k + 1; i < m; ++i) v[i - k] = work(i, k);
        T vnorm_sq = T(0);
        for (T x : v) vnorm_sq += x * x;
        if (vnorm_sq > T(0)) {
            // apply H = I - 2 v vᵀ / (vᵀv) to the trailing block
            for (std::size_t j = k; j < n; ++j) {
                T dot = T(0);
                for (std::size_t i = k; i < m; ++i) dot += v[i - k] * work(i, j);
                const T f = T(2) * dot / vnorm_sq;
                for (std::size_t i = k; i < m; ++i) work(i, j) -= f * v[i - k];
            }
        }
        work(k, k) = alpha;
        for (std::size_t i = k + 1; i < m; ++i) work(i, k) = T(0);
        vs.push_back(std::move(v));
    }
    // Q = H_0 ... H_{n-1} applied to the first n columns of I
    MatT<T> q(m, n);
    for (std::size_t j = 0; j < n; ++j) q(j, j) = T(1);
    for (std::size_t k = n; k-- > 0;) {
        const std::vector<T>& v = vs[k];
        T vnorm_sq = T(0);
        for (T x : v) vnorm_sq += x * x;
        if (vnorm_sq == T(0)) continue;
        for (std::size_t j = 0; j < n; ++j) {
            T dot = T(0);
            for (std::size_t i = k; i < m; ++i) dot += v[i - k] * q(i, j);
            const T f = T(2) * dot / vnorm_sq;
            for (std::size_t i = k; i < m; ++i) q(i, j) -= f * v[i - k];
        }
    }
    QrResultT<T> out;
    out.r = MatT<T>(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) out.r(i, j) = work(i, j);
    // sign fix: diag(R) >= 0
    for (std::size_t k = 0; k < n; ++k) {
        if (out.r(k, k) < T(0)) {
            for (std::size_t j = k; j < n; ++j) out.r(k, j) = -out.r(k, j);
            for (std::size_t i = 0; i < m; ++i) q(i, k) = -q(i, k);
        }
    }
    out.q = std::move(q);
    return out;
}

inline QrResult qr_thin(const Mat& a) { return qr_thin_t<double>(a); }

template <class T>
struct SymEigT {
    std::vector<T> values;  // descending
    MatT<T> vectors;        // orthonormal columns, vectors.col(k) pairs values[k]
};

using SymEig = SymEigT<double>;

// Symmetric eigendecomposition by cyclic Jacobi rotations.
// Converges when the off-diagonal Frobenius mass drops below 1e-12 * ||A||_F
// (at most 100 sweeps). Eigenvalues sorted descending; each eigenvector's first
// component with |x| > 1e-12 is made positive so the output is unique.
template <class T>
SymEigT<T> sym_eig_desc_t(const MatT<T>& a_in) {
    const std::size_t n = a_in.rows();
    if (a_in.cols() != n) throw ShapeMismatch("sym_eig_desc: matrix not square");
    const T amax = max_abs(a_in);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a_in(i, j) - a_in(j, i)) > T(1e-9) * std::max(amax, T(0)))
                throw NotSymmetric("sym_eig_desc: |A - Aᵀ| exceeds 1e-9·|A|");

    MatT<T> a = a_in;
    MatT<T> v = MatT<T>::identity(n);
    const T fro = frob_norm(a);
    const T thresh = T(1e-12) * fro;

    auto off_mass = [&] {
        T s = T(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(T(2) * s);
    };

    for (int sweep = 0; sweep < 100 && off_mass() > thresh; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const T apq = a(p, q);
                if (apq == T(0)) continue;
                const T app = a(p, p), aqq = a(q, q);
                const T tau = (aqq - app) / (T(2) * apq);
                const T t = (tau >= T(0)) ? T(1) / (tau + std::sqrt(T(1) + tau * tau))
                                          : T(1) / (tau - std::sqrt(T(1) + tau * tau));
                const T c = T(1) / std::sqrt(T(1) + t * t);
                const T s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const T akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const T apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const T vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymEigT<T> out;
    out.values.resize(n);
    out.vectors = MatT<T>(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = idx[k];
        out.values[k] = a(src, src);
        T sign = T(1);
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(v(i, src)) > T(1e-12)) {
                sign = v(i, src) > T(0) ? T(1) : T(-1);
                break;
            }
        }
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = sign * v(i, src);
    }
    return out;
}

inline SymEig sym_eig_desc(const Mat& a) { return sym_eig_desc_t<double>(a); }

// Singular values via the eigenvalues of the smaller Gram matrix.
template <class T>
std::vector<T> singular_values_t(const MatT<T>& a) {
    if (!a.all_finite()) throw NumericError("singular_values: non-finite input");
    const bool tall = a.rows() >= a.cols();
    MatT<T> gram = tall ? matmul_tn(a, a) : matmul_nt(a, a);
    // enforce exact symmetry against rounding asymmetry before Jacobi
    for (std::size_t i = 0; i < gram.rows(); ++i)
        for (std::size_t j = i + 1; j < gram.cols(); ++j) {
            const T m = (gram(i, j) + gram(j, i)) / T(2);
            gram(i, j) = m;
            gram(j, i) = m;
        }
    SymEigT<T> eig = sym_eig_desc_t(gram);
    std::vector<T> sv(eig.values.size());
    for (std::size_t i = 0; i < sv.size(); ++i) sv[i] = std::sqrt(std::max(eig.values[i], T(0)));
    return sv;
}

inline std::vector<double> singular_values(const Mat& a) { return singular_values_t<double>(a); }

// Spectral norm (largest singular value).
inline double spectral_norm(const Mat& a) {
    auto sv = singular_values(a);
    return sv.empty() ? 0.0 : sv.front();
}

}  // namespace coreflow
