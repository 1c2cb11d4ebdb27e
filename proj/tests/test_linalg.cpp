#include <catch2/catch_amalgamated.hpp>

#include "coreflow/linalg.hpp"
#include "coreflow/rng.hpp"
#include "test_helpers.hpp"

using namespace coreflow;

TEST_CASE("qr_thin: identity input") {
    Mat a = Mat::identity(3);
    auto qr = qr_thin(a);
    CHECK(max_abs(qr.q - Mat::identity(3)) == 0.0);
    CHECK(max_abs(qr.r - Mat::identity(3)) == 0.0);
}

TEST_CASE("qr_thin: permuted orthonormal input is reproduced after sign fixing") {
    Mat a(3, 2);
    a(0, 1) = 1.0;
    a(1, 0) = 1.0;
    auto qr = qr_thin(a);
    CHECK(max_abs(qr.q - a) < 1e-15);
    CHECK(max_abs(qr.r - Mat::identity(2)) < 1e-15);
}

TEST_CASE("qr_thin: random 6x3 reconstructs and is orthonormal") {
    auto rng = rng_stream(42, 0);
    Mat a = random_mat(6, 3, rng);
    auto qr = qr_thin(a);
    CHECK(max_abs(matmul_tn(qr.q, qr.q) - Mat::identity(3)) < 1e-10);
    CHECK(frob_norm(matmul(qr.q, qr.r) - a) / frob_norm(a) < 1e-9);
    for (std::size_t k = 0; k < 3; ++k) CHECK(qr.r(k, k) >= 0.0);
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t j = 0; j < i; ++j) CHECK(qr.r(i, j) == 0.0);
}

TEST_CASE("qr_thin: rank-deficient input throws") {
    Mat a(4, 2);
    a(0, 0) = 1.0;
    a(1, 0) = 2.0;  // second column is zero
    CHECK_THROWS_AS(qr_thin(a), RankDeficient);
}

TEST_CASE("qr_thin: determinism") {
    auto rng = rng_stream(9, 1);
    Mat a = random_mat(8, 4, rng);
    auto q1 = qr_thin(a);
    auto q2 = qr_thin(a);
    CHECK(q1.q == q2.q);
    CHECK(q1.r == q2.r);
}

TEST_CASE("sym_eig_desc: diagonal matrix") {
    Mat a(3, 3);
    a(0, 0) = 3.0;
    a(1, 1) = 1.0;
    a(2, 2) = 2.0;
    auto eig = sym_eig_desc(a);
    CHECK(eig.values == std::vector<double>{3.0, 2.0, 1.0});
    // signed permutation of I: columns e1, e3, e2
    Mat expect(3, 3);
    expect(0, 0) = 1.0;
    expect(2, 1) = 1.0;
    expect(1, 2) = 1.0;
    CHECK(max_abs(eig.vectors - expect) == 0.0);
}

TEST_CASE("sym_eig_desc: closed-form 2x2") {
    Mat a(2, 2);
    a(0, 0) = 2.0;
    a(0, 1) = 1.0;
    a(1, 0) = 1.0;
    a(1, 1) = 2.0;
    auto eig = sym_eig_desc(a);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(rel_err(eig.values[0], 3.0) < 1e-12);
    CHECK(rel_err(eig.values[1], 1.0) < 1e-12);
    CHECK(std::abs(eig.vectors(0, 0) - inv_sqrt2) < 1e-12);
    CHECK(std::abs(eig.vectors(1, 0) - inv_sqrt2) < 1e-12);
    CHECK(std::abs(eig.vectors(0, 1) - inv_sqrt2) < 1e-12);
    CHECK(std::abs(eig.vectors(1, 1) + inv_sqrt2) < 1e-12);
}

TEST_CASE("sym_eig_desc: zero matrix") {
    Mat a(4, 4);
    auto eig = sym_eig_desc(a);
    for (double v : eig.values) CHECK(v == 0.0);
    CHECK(max_abs(eig.vectors - Mat::identity(4)) == 0.0);
}

TEST_CASE("sym_eig_desc: residual and orthonormality on random symmetric inputs") {
    auto rng = rng_stream(3, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(15);
        Mat b = random_mat(n, n, rng);
        Mat a = matmul_tn(b, b);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double m = 0.5 * (a(i, j) + a(j, i));
                a(i, j) = a(j, i) = m;
            }
        auto eig = sym_eig_desc(a);
        const double norm2 = eig.values.empty() ? 0.0 : std::abs(eig.values[0]);
        for (std::size_t k = 0; k < n; ++k) {
            Mat v(n, 1);
            for (std::size_t i = 0; i < n; ++i) v(i, 0) = eig.vectors(i, k);
            Mat av = matmul(a, v);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(std::abs(av(i, 0) - eig.values[k] * v(i, 0)) < 1e-8 * std::max(norm2, 1.0));
        }
        CHECK(max_abs(matmul_tn(eig.vectors, eig.vectors) - Mat::identity(n)) < 1e-10);
        for (std::size_t k = 1; k < n; ++k) CHECK(eig.values[k - 1] >= eig.values[k]);
    }
}

TEST_CASE("sym_eig_desc: asymmetric input throws") {
    Mat a(2, 2);
    a(0, 1) = 1.0;
    CHECK_THROWS_AS(sym_eig_desc(a), NotSymmetric);
}

TEST_CASE("singular_values: |diagonal| sorted") {
    Mat a(2, 2);
    a(0, 0) = 2.0;
    a(1, 1) = -3.0;
    auto sv = singular_values(a);
    CHECK(rel_err(sv[0], 3.0) < 1e-12);
    CHECK(rel_err(sv[1], 2.0) < 1e-12);
}

TEST_CASE("singular_values: rank-1 outer product") {
    auto rng = rng_stream(5, 2);
    Mat u = random_mat(5, 1, rng);
    Mat v = random_mat(4, 1, rng);
    double nu = frob_norm(u), nv = frob_norm(v);
    for (std::size_t i = 0; i < 5; ++i) u(i, 0) /= nu;
    for (std::size_t i = 0; i < 4; ++i) v(i, 0) /= nv;
    Mat a = matmul_nt(u, v);
    auto sv = singular_values(a);
    CHECK(std::abs(sv[0] - 1.0) < 1e-10);
    for (std::size_t k = 1; k < sv.size(); ++k) CHECK(sv[k] < 1e-10);
}

TEST_CASE("singular_values: matches sqrt eigenvalues of AᵀA (seed 7)") {
    auto rng = rng_stream(7, 0);
    Mat a = random_mat(5, 3, rng);
    auto sv = singular_values(a);
    auto eig = sym_eig_desc(matmul_tn(a, a));
    REQUIRE(sv.size() == 3);
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(std::abs(sv[k] - std::sqrt(std::max(eig.values[k], 0.0))) <
              1e-7 * std::max(sv[0], 1.0));
}

TEST_CASE("singular_values: energy identity and Gram-oracle property (50 random)") {
    auto rng = rng_stream(13, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(32);
        const std::size_t n = 1 + rng.uniform_index(32);
        Mat a = random_mat(m, n, rng);
        auto sv = singular_values(a);
        double sum_sq = 0.0;
        for (double s : sv) sum_sq += s * s;
        CHECK(rel_err(sum_sq, frob_norm_sq(a)) < 1e-8);
        // independent route: eigenvalues of AᵀA (the larger Gram when m < n)
        auto eig = sym_eig_desc(matmul_tn(a, a));
        for (std::size_t k = 0; k < sv.size(); ++k)
            CHECK(std::abs(sv[k] - std::sqrt(std::max(eig.values[k], 0.0))) <
                  1e-7 * (sv[0] + 1.0));
        for (std::size_t k = 0; k < sv.size(); ++k) CHECK(sv[k] >= 0.0);
        for (std::size_t k = 1; k < sv.size(); ++k) CHECK(sv[k - 1] >= sv[k]);
    }
}

TEST_CASE("qr_thin: orthonormality across random shapes") {
    auto rng = rng_stream(21, 0);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(8);
        const std::size_t m = n + rng.uniform_index(24);
        Mat a = random_mat(m, n, rng, 2.0);
        auto qr = qr_thin(a);
        CHECK(max_abs(matmul_tn(qr.q, qr.q) - Mat::identity(n)) < 1e-10);
        CHECK(frob_norm(matmul(qr.q, qr.r) - a) <= 1e-9 * std::max(frob_norm(a), 1.0));
    }
}
