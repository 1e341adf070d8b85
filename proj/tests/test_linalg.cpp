#include <catch_amalgamated.hpp>

#include "phmb/linalg.hpp"
#include "phmb/sampling.hpp"

#include <cmath>
#include <random>

using namespace phmb;
using Catch::Matchers::WithinAbs;

namespace {

Mat random_matrix(int r, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace

TEST_CASE("numerical rank of products of known rank") {
  std::mt19937_64 rng(7);
  for (int r = 0; r <= 4; ++r) {
    const Mat m = random_matrix(5, r, rng) * random_matrix(r, 6, rng);
    CHECK(numerical_rank(m) == r);
  }
  CHECK(numerical_rank(Mat(0, 3)) == 0);
  Mat d = Mat::Zero(3, 3);
  d.diagonal() << 1.0, 1e-3, 1e-14;
  const RankInfo ri = rank_info(d);
  CHECK(ri.rank == 2);
  CHECK_THAT(ri.gap, WithinAbs(1e-3 / 1e-14, 1e-3 / 1e-14 * 1e-9));
}

TEST_CASE("continuous kernel basis follows the pivoted construction") {
  SECTION("E = [1, 3]") {
    Mat e(1, 2);
    e << 1.0, 3.0;
    const KernelBasis kb = continuous_kernel_basis(e, 1);
    REQUIRE(kb.basis.cols() == 1);
    // any kernel vector is a multiple of (-3, 1)
    CHECK_THAT(kb.basis(0, 0) + 3.0 * kb.basis(1, 0), WithinAbs(0.0, 1e-14));
    CHECK(std::abs(kb.basis(1, 0)) > 0.1);
  }
  SECTION("E = [[1,0,0],[0,1,0]]") {
    Mat e = Mat::Zero(2, 3);
    e(0, 0) = 1.0;
    e(1, 1) = 1.0;
    const Mat j = continuous_kernel_basis(e, 2).basis;
    REQUIRE(j.cols() == 1);
    CHECK_THAT(j(0, 0), WithinAbs(0.0, 1e-15));
    CHECK_THAT(j(1, 0), WithinAbs(0.0, 1e-15));
    CHECK(std::abs(j(2, 0)) > 0.5);
  }
  SECTION("rank mismatch") { CHECK_THROWS_AS(continuous_kernel_basis(Mat::Zero(1, 2), 1), RankError); }
  SECTION("random rank-deficient matrices") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const int r = 1 + trial % 3;
      const Mat e = random_matrix(4, r, rng) * random_matrix(r, 6, rng);
      const Mat j = continuous_kernel_basis(e, r).basis;
      REQUIRE(j.cols() == 6 - r);
      CHECK(max_abs(Mat(e * j)) <= 1e-10 * (1.0 + max_abs(e)));
      CHECK(smallest_singular_value(j) > 0.0);
    }
  }
}

TEST_CASE("frozen pivots give a continuous kernel map") {
  Mat e(1, 3);
  e << 2.0, 1.0, -1.0;
  const KernelBasis kb = continuous_kernel_basis(e, 1);
  Mat e2 = e;
  e2(0, 1) += 1e-6;
  const Mat j2 = kernel_from_pivots(e2, kb.pivots);
  CHECK(max_abs(Mat(e2 * j2)) <= 1e-14);
  CHECK(max_abs(Mat(j2 - kb.basis)) <= 1e-5);
}

TEST_CASE("pseudo-inverse satisfies the Penrose equations") {
  std::mt19937_64 rng(3);
  const Mat a = random_matrix(5, 2, rng) * random_matrix(2, 4, rng);
  const Mat p = pseudo_inverse(a);
  CHECK(max_abs(Mat(a * p * a - a)) < 1e-12);
  CHECK(max_abs(Mat(p * a * p - p)) < 1e-10);
  CHECK(max_abs(Mat((a * p).transpose() - a * p)) < 1e-12);
  CHECK(max_abs(Mat((p * a).transpose() - p * a)) < 1e-12);
}

TEST_CASE("orthonormal kernel") {
  Mat a(1, 3);
  a << 0.0, 1.0, 0.0;
  const Mat k = orthonormal_kernel(a);
  REQUIRE(k.cols() == 2);
  CHECK(max_abs(Mat(a * k)) < 1e-15);
  CHECK(max_abs(Mat(k.transpose() * k - Mat::Identity(2, 2))) < 1e-14);
  CHECK(orthonormal_kernel(Mat(0, 2)).cols() == 2);
}

TEST_CASE("finite differences match hand derivatives") {
  auto f = [](const Vec& x) { return std::sin(x(0)) * x(1) + x(1) * x(1) * x(1); };
  Vec x(2);
  x << 0.3, -1.2;
  const Vec g = fd_gradient(f, x);
  CHECK_THAT(g(0), WithinAbs(std::cos(0.3) * -1.2, 1e-8));
  CHECK_THAT(g(1), WithinAbs(std::sin(0.3) + 3.0 * 1.44, 1e-8));
  auto F = [](const Vec& x) {
    Vec y(2);
    y << x(0) * x(1), std::exp(x(0));
    return y;
  };
  const Mat j = fd_jacobian(F, x);
  CHECK_THAT(j(0, 0), WithinAbs(-1.2, 1e-8));
  CHECK_THAT(j(0, 1), WithinAbs(0.3, 1e-8));
  CHECK_THAT(j(1, 0), WithinAbs(std::exp(0.3), 1e-8));
  CHECK_THAT(j(1, 1), WithinAbs(0.0, 1e-8));
}

TEST_CASE("skew3 is the cross-product matrix") {
  Eigen::Vector3d a(1.0, -2.0, 0.5), b(0.3, 0.7, -1.1);
  const Vec s = skew3(Vec(a)) * Vec(b);
  const Eigen::Vector3d c = a.cross(b);
  for (int i = 0; i < 3; ++i) CHECK_THAT(s(i), WithinAbs(c(i), 1e-15));
}

TEST_CASE("block helpers accept empty operands") {
  const Mat v = vstack(Mat(0, 3), Mat::Ones(2, 3));
  CHECK(v.rows() == 2);
  const Mat b = block_diag(Mat::Ones(1, 1), Mat::Constant(2, 2, 2.0));
  CHECK(b.rows() == 3);
  CHECK(b(0, 1) == 0.0);
  CHECK(b(2, 2) == 2.0);
  CHECK(concat(Vec(0), Vec::Ones(2)).size() == 2);
}

TEST_CASE("sample sets are reproducible and honor the box and guard") {
  SampleBox box{Vec::Constant(2, -1.0), Vec::Constant(2, 3.0)};
  const SampleSet a = make_samples(box, 50, 42);
  const SampleSet b = make_samples(box, 50, 42);
  const SampleSet c = make_samples(box, 50, 43);
  REQUIRE(a.points.size() == 50);
  CHECK(a.points.front().isApprox(Vec::Constant(2, 1.0)));
  bool differs = false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i] == b.points[i]);
    CHECK((a.points[i].array() >= -1.0).all());
    CHECK((a.points[i].array() <= 3.0).all());
    if (i > 0 && a.points[i] != c.points[i]) differs = true;
  }
  CHECK(differs);

  const SampleSet g = make_samples(box, 30, 1, [](const Vec& x) { return x(0) > 0.5; });
  CHECK(g.points.size() == 30);
  for (const auto& p : g.points) CHECK(p(0) > 0.5);

  CHECK_THROWS_AS(make_samples(box, 0, 1), ShapeError);
  CHECK_THROWS_AS(make_samples(box, 5, 1, [](const Vec&) { return false; }), ShapeError);
}
