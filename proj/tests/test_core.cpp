#include "doctest.h"

#include <random>

#include "ptycho/core.hpp"

using namespace ptycho;

TEST_SUITE("core") {
  TEST_CASE("single complex value maps to [re, im]") {
    ComplexGrid g(1, 1, cfloat{1.0f, 2.0f});
    const RIVector v = to_rivector(g);
    REQUIRE(v.size() == 2);
    CHECK(v[0] == 1.0f);
    CHECK(v[1] == 2.0f);
  }

  TEST_CASE("zero grid maps to zeros") {
    ComplexGrid g(1, 2);
    CHECK(to_rivector(g) == RIVector(4));
  }

  TEST_CASE("two grids concatenate real parts then imaginary parts") {
    ComplexGrid a(2, 2);
    ComplexGrid b(1, 2);
    for (std::size_t i = 0; i < 4; ++i) a[i] = {float(i), float(10 + i)};
    for (std::size_t i = 0; i < 2; ++i) b[i] = {float(100 + i), float(200 + i)};
    const RIVector v = to_rivector(a, b);
    REQUIRE(v.size() == 12);
    CHECK(v[4] == 100.0f);
    CHECK(v[6] == 10.0f);
    CHECK(v[11] == 201.0f);
    const Shape shapes[] = {a.shape(), b.shape()};
    const auto back = from_rivector(v, shapes);
    CHECK(back[0] == a);
    CHECK(back[1] == b);
  }

  TEST_CASE("from_rivector inverts to_rivector bitwise") {
    std::mt19937 rng(7);
    std::normal_distribution<float> d;
    RIVector v(2 * 6);
    for (auto& x : v.values()) x = d(rng);
    const Shape shapes[] = {{2, 2}, {1, 2}};
    const auto grids = from_rivector(v, shapes);
    CHECK(to_rivector(grids[0], grids[1]) == v);
    const Shape one[] = {{1, 1}};
    CHECK(from_rivector(RIVector(std::vector<float>{1.0f, 2.0f}), one)[0][0] == cfloat(1.0f, 2.0f));
  }

  TEST_CASE("length mismatch is rejected") {
    const Shape shapes[] = {{2, 2}};
    CHECK_THROWS_AS(from_rivector(RIVector(6), shapes), std::invalid_argument);
    CHECK_THROWS_AS(RIVector(3), std::invalid_argument);
  }

  TEST_CASE("geometry rejects windows leaving the object") {
    CHECK_THROWS_AS(ScanGeometry({4, 4}, {2, 2}, {{3, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(ScanGeometry({4, 4}, {2, 2}, {}), std::invalid_argument);
    CHECK_THROWS_AS(ScanGeometry({4, 4}, {5, 2}, {{0, 0}}), std::invalid_argument);
    CHECK_NOTHROW(ScanGeometry({4, 4}, {2, 2}, {{2, 2}}));
  }

  TEST_CASE("default raster is centred and has 1024 positions") {
    const auto g = ScanGeometry::raster({224, 224}, {64, 64}, 5, 32);
    CHECK(g.count() == 1024);
    CHECK(g.offset(0) == Offset{2, 2});
    CHECK(g.offset(1023) == Offset{157, 157});
    CHECK_THROWS_AS(g.offset(1024), std::out_of_range);
  }

  TEST_CASE("diffraction data validation") {
    RealStack y(1, {2, 2}, 1.0f);
    CHECK_THROWS_AS(DiffractionStack(y, RealGrid(2, 2, 0.0f)), std::invalid_argument);
    y[0] = -1.0f;
    CHECK_THROWS_AS(DiffractionStack(y, RealGrid(2, 2, 1e-8f)), std::invalid_argument);
  }
}
