#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "heatlens/gradcheck.hpp"
#include "heatlens/ops.hpp"
#include "heatlens/rng.hpp"

using namespace heatlens;

namespace {

Tensor<double> rnd(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  rng::Xoshiro256pp r(seed);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = r.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

// independent reference: direct quadruple loop, no shared code with conv2d
std::vector<double> conv_reference(const Tensor<double>& x, const Tensor<double>& k,
                                   std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const std::size_t cin = xs[0], h = xs[1], w = xs[2];
  const std::size_t cout = ks[0], kh = ks[2], kw = ks[3];
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t o = 0; o < ow; ++o) {
        double acc = 0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t fh = 0; fh < kh; ++fh)
            for (std::size_t fw = 0; fw < kw; ++fw) {
              const long ih = static_cast<long>(r * stride + fh) - static_cast<long>(pad);
              const long iw = static_cast<long>(o * stride + fw) - static_cast<long>(pad);
              if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) || iw >= static_cast<long>(w))
                continue;
              acc += x[(ci * h + ih) * w + iw] * k[((co * cin + ci) * kh + fh) * kw + fw];
            }
        out[(co * oh + r) * ow + o] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<double>({2, 3}, {1, 2}), std::invalid_argument);
  CHECK(Tensor<double>::scalar(5.0).item() == 5.0);
  CHECK_THROWS(t.item());
}

TEST_CASE("elementwise trivial values") {
  CHECK(heatlens::exp(Tensor<double>::zeros({2, 2})).values() ==
        std::vector<double>{1, 1, 1, 1});
  CHECK(relu(Tensor<double>({2}, {-1, 2})).values() == std::vector<double>{0, 2});
  CHECK(add(Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4})).values() ==
        std::vector<double>{4, 6});
  CHECK(scale(Tensor<double>({2}, {1, -2}), 3.0).values() == std::vector<double>{3, -6});
}

TEST_CASE("product-rule gradient d/da (a*b)") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2}, {1, 2}));
  Tensor<double> b({2}, {3, 4});
  auto loss = sum(mul(a, b));  // upstream grad of the product is all-ones
  auto g = tape.backward(loss);
  CHECK(g.at(a).values() == std::vector<double>{3, 4});
}

TEST_CASE("broadcast rules") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> row({3}, {10, 20, 30});
  CHECK(add(a, row).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(a, Tensor<double>::scalar(1)).values() ==
        std::vector<double>{2, 3, 4, 5, 6, 7});
  // leading-dimension broadcast is rejected
  Tensor<double> colish({2}, {1, 2});
  CHECK_THROWS_AS(add(a, colish), std::invalid_argument);

  // gradient of the broadcast operand folds over the leading blocks
  Tape<double> tape;
  auto rowt = tape.leaf(row);
  auto g = tape.backward(sum(mul(a, rowt)));
  CHECK(g.at(rowt).values() == std::vector<double>{5, 7, 9});
}

TEST_CASE("matmul values") {
  auto x = rnd({3, 3}, 11);
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(matmul(eye, x).values() == x.values());

  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 1}, {5, 6});
  CHECK(matmul(a, b).values() == std::vector<double>{17, 39});

  CHECK_THROWS_AS(matmul(a, Tensor<double>({3, 1}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("conv2d trivial maps") {
  auto x = rnd({1, 4, 4}, 3);
  Tensor<double> k1({1, 1, 1, 1}, {1.0});
  CHECK(conv2d(x, k1, 1, 0).values() == x.values());

  // 3x3 averaging kernel on a constant image: interior stays c, zero-padded
  // edge cells scale by valid-count/9
  const double c = 0.7;
  auto img = Tensor<double>::full({1, 4, 4}, c);
  auto kavg = Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
  auto out = conv2d(img, kavg, 1, 1);
  CHECK(out[5] == doctest::Approx(c).epsilon(1e-12));            // interior
  CHECK(out[0] == doctest::Approx(c * 4 / 9.0).epsilon(1e-12));  // corner
  CHECK(out[1] == doctest::Approx(c * 6 / 9.0).epsilon(1e-12));  // edge

  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({1, 1, 9, 9}), 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({1, 1, 2, 2}), 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d against independent loop reference") {
  auto x = rnd({1, 4, 4}, 17);
  auto k = rnd({2, 1, 3, 3}, 19);
  for (std::size_t stride : {std::size_t{1}, std::size_t{2}})
    for (std::size_t pad : {std::size_t{0}, std::size_t{1}}) {
      auto got = conv2d(x, k, stride, pad);
      auto want = conv_reference(x, k, stride, pad);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("pixel_shuffle layout and round trip") {
  auto x = rnd({4, 2, 2}, 23);
  CHECK(pixel_shuffle(x, 1).values() == x.values());

  Tensor<double> abcd({4, 1, 1}, {1, 2, 3, 4});
  auto s = pixel_shuffle(abcd, 2);
  CHECK(s.shape() == Shape{1, 2, 2});
  CHECK(s.values() == std::vector<double>{1, 2, 3, 4});  // [[a,b],[c,d]]

  auto big = rnd({8, 3, 5}, 29);
  auto round = pixel_unshuffle(pixel_shuffle(big, 2), 2);
  CHECK(round.values() == big.values());

  CHECK_THROWS_AS(pixel_shuffle(rnd({3, 2, 2}, 1), 2), std::invalid_argument);
}

TEST_CASE("backward basics") {
  auto shape = Shape{2, 3};
  auto x = rnd(shape, 31);

  Tape<double> t1;
  auto x1 = t1.leaf(x);
  auto g1 = t1.backward(sum(x1));
  CHECK(g1.at(x1).values() == std::vector<double>(6, 1.0));

  Tape<double> t2;
  auto x2 = t2.leaf(x);
  auto g2 = t2.backward(scale(sum(mul(x2, x2)), 0.5));
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(g2.at(x2)[i] == doctest::Approx(x[i]).epsilon(1e-12));

  // non-scalar loss rejected
  Tape<double> t3;
  auto x3 = t3.leaf(x);
  CHECK_THROWS_AS(t3.backward(mul(x3, x3)), std::invalid_argument);

  // unreachable leaf gets zeros
  Tape<double> t4;
  auto used = t4.leaf(x);
  auto unused = t4.leaf(rnd(shape, 37));
  auto g4 = t4.backward(sum(used));
  CHECK_FALSE(g4.reached(unused));
  CHECK(g4.at(unused).values() == std::vector<double>(6, 0.0));
}

TEST_CASE("backward is deterministic bit for bit") {
  auto x = rnd({4, 4}, 41);
  auto w = rnd({4, 4}, 43);
  auto run = [&]() {
    Tape<double> tape;
    auto xt = tape.leaf(x);
    auto wt = tape.leaf(w);
    auto loss = sum(mul(gelu(matmul(xt, wt)), rnd({4, 4}, 47)));
    auto g = tape.backward(loss);
    return std::make_pair(g.at(xt).values(), g.at(wt).values());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("linearity of matmul, conv2d, pixel_shuffle") {
  const double ca = 0.37, cb = -1.21;
  auto mix = [&](const Tensor<double>& a, const Tensor<double>& b) {
    return add(scale(a, ca), scale(b, cb));
  };
  auto close = [&](const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  };

  auto x = rnd({2, 4, 4}, 53), y = rnd({2, 4, 4}, 59);
  auto k = rnd({3, 2, 3, 3}, 61);
  close(conv2d(mix(x, y), k, 1, 1), mix(conv2d(x, k, 1, 1), conv2d(y, k, 1, 1)));

  auto pa = rnd({8, 2, 2}, 67), pb = rnd({8, 2, 2}, 71);
  close(pixel_shuffle(mix(pa, pb), 2), mix(pixel_shuffle(pa, 2), pixel_shuffle(pb, 2)));

  auto ma = rnd({3, 4}, 73), mb = rnd({3, 4}, 79), mw = rnd({4, 2}, 83);
  close(matmul(mix(ma, mb), mw), mix(matmul(ma, mw), matmul(mb, mw)));
}

TEST_CASE("non-finite results are rejected") {
  Tensor<double> z({2}, {1.0, 0.0});
  CHECK_THROWS_AS(div(Tensor<double>({2}, {1, 1}), z), std::runtime_error);
  CHECK_THROWS_AS(heatlens::sqrt(Tensor<double>({1}, {-1.0})), std::runtime_error);
  CHECK_THROWS_AS(heatlens::exp(Tensor<double>({1}, {1e4})), std::runtime_error);
}

TEST_CASE("every primitive op passes central-difference checks") {
  auto report = gradcheck_ops(7);
  for (const auto& e : report.entries) {
    INFO(e.name, " rel err ", e.max_rel_err);
    CHECK(e.pass);
  }
  CHECK(report.worst < kGradCheckTol);
}

TEST_CASE("gradcheck trips on a corrupted gradient") {
  auto report = gradcheck_ops(7, "matmul");
  bool found = false;
  for (const auto& e : report.entries)
    if (e.name == "matmul") {
      found = true;
      CHECK_FALSE(e.pass);
    }
  CHECK(found);
  CHECK_FALSE(report.all_pass);
}
