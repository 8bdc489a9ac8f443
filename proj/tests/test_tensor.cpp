#include <gtest/gtest.h>

#include <vector>

#include "fer/tensor.hpp"
#include "support/oracles.hpp"

using namespace fer;

TEST(Tensor, FromRowMajor) {
  const auto t = tensor_from<double>({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t(1, 0), 3);
  EXPECT_EQ(t(0, 1), 2);
  EXPECT_EQ(t.strides(), (Extents{2, 1}));
}

TEST(Tensor, Singleton) {
  const auto t = tensor_from<double>({1}, {5});
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], 5);
}

TEST(Tensor, LengthMismatchNamesBothSizes) {
  try {
    tensor_from<double>({2, 3}, {1, 2, 3, 4, 5});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('6'), std::string::npos);
    EXPECT_NE(msg.find('5'), std::string::npos);
  }
}

TEST(Tensor, ZeroExtentRejected) { EXPECT_THROW(Tensor<float>({2, 0}), ShapeError); }

TEST(Tensor, RowMajorAddressingMatchesNestedLoops) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Extents shape;
    const std::size_t rank = 1 + uniform_index(rng, 4);
    for (std::size_t r = 0; r < rank; ++r) shape.push_back(1 + uniform_index(rng, 4));
    Tensor<double> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    // Odometer walk over indices in lexicographic order must visit 0, 1, 2, ...
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t expected = 0; expected < t.size(); ++expected) {
      ASSERT_EQ(t.offset(idx), expected);
      std::size_t flat = 0;
      const auto strides = t.strides();
      for (std::size_t r = 0; r < rank; ++r) flat += idx[r] * strides[r];
      ASSERT_EQ(flat, expected);
      for (std::size_t r = rank; r-- > 0;) {
        if (++idx[r] < shape[r]) break;
        idx[r] = 0;
      }
    }
  }
}

TEST(Tensor, IndexOutOfRange) {
  Tensor<float> t({2, 2});
  EXPECT_THROW(t(2, 0), ShapeError);
  EXPECT_THROW(t(0), ShapeError);
}

TEST(Matmul, Identity) {
  const auto i2 = tensor_from<double>({2, 2}, {1, 0, 0, 1});
  const auto m = tensor_from<double>({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(i2, m), m);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  // Oracle value for [[1,2],[3,4]] x [[5,6],[7,8]].
  const auto oracle = oracle::naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
  ASSERT_EQ(oracle, (std::vector<double>{19, 22, 43, 50}));
  const auto c = matmul(tensor_from<double>({2, 2}, {1, 2, 3, 4}), tensor_from<double>({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(c.values(), oracle);
}

TEST(Matmul, ZeroMatrix) {
  Rng rng(1);
  const auto b = oracle::random_tensor({3, 4}, rng);
  const auto c = matmul(Tensor<double>({2, 3}), b);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, DimensionMismatch) {
  EXPECT_THROW(matmul(Tensor<float>({2, 3}), Tensor<float>({2, 3})), ShapeError);
}

TEST(Matmul, RandomShapesAgreeWithOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + uniform_index(rng, 9), k = 1 + uniform_index(rng, 9),
                      n = 1 + uniform_index(rng, 9);
    const auto a = oracle::random_tensor({m, k}, rng), b = oracle::random_tensor({k, n}, rng);
    const auto c = matmul(a, b);
    const auto ref = oracle::naive_matmul(a.values(), b.values(), m, k, n);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, AssociativeOnSmallIntegers) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d0 = 1 + uniform_index(rng, 6), d1 = 1 + uniform_index(rng, 6),
                      d2 = 1 + uniform_index(rng, 6), d3 = 1 + uniform_index(rng, 6);
    auto ints = [&](Extents s) {
      Tensor<double> t(std::move(s));
      for (auto& v : t.data()) v = static_cast<double>(uniform_index(rng, 11)) - 5.0;
      return t;
    };
    const auto a = ints({d0, d1}), b = ints({d1, d2}), c = ints({d2, d3});
    EXPECT_EQ(matmul(matmul(a, b), c), matmul(a, matmul(b, c)));
  }
}

TEST(Reduce, SumAndMean) {
  const auto t = tensor_from<double>({3}, {1, 2, 3});
  const auto s = reduce(t, 0, Reduction::sum);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s[0], 6);
  EXPECT_EQ(reduce(t, 0, Reduction::mean)[0], 2);

  const auto m = tensor_from<double>({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(reduce(m, 0, Reduction::sum).values(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(reduce(m, 1, Reduction::sum).values(), (std::vector<double>{6, 15}));
}

TEST(Reduce, AxisOutOfRange) {
  EXPECT_THROW(reduce(Tensor<float>({2, 2}), 2, Reduction::sum), ShapeError);
  EXPECT_THROW(argmax(Tensor<float>({2}), 1), ShapeError);
}

TEST(Argmax, Basic) {
  EXPECT_EQ(argmax(tensor_from<double>({3}, {0.1, 0.5, 0.4}), 0), (std::vector<std::size_t>{1}));
  EXPECT_EQ(argmax(tensor_from<double>({2}, {0.5, 0.5}), 0), (std::vector<std::size_t>{0}));
  const auto m = tensor_from<double>({2, 3}, {0, 9, 1, 7, 2, 7});
  EXPECT_EQ(argmax(m, 1), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(argmax(m, 0), (std::vector<std::size_t>{1, 0, 1}));
}

TEST(Argmax, DuplicatedMaximaPickFirstOccurrence) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(uniform_index(rng, 4));
    const auto first = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    EXPECT_EQ(argmax(tensor_from<double>({n}, v), 0)[0], first);
  }
}

TEST(Tensor, FiniteCheck) {
  auto t = tensor_from<double>({2}, {1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  EXPECT_NO_THROW(check_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(check_finite(t, "t"), TrainingError);
}
