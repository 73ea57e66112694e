#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "heatlens/config.hpp"
#include "heatlens/image_io.hpp"
#include "heatlens/rng.hpp"
#include "heatlens/serialize.hpp"
#include "heatlens/synth.hpp"

using namespace heatlens;

namespace {

template <typename T>
Tensor<T> rnd(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  rng::Xoshiro256pp r(seed);
  std::vector<T> v(numel(shape));
  for (auto& e : v) e = static_cast<T>(r.uniform(lo, hi));
  return Tensor<T>(shape, std::move(v));
}

std::string netpbm_bytes(const RawImage& img) {
  std::ostringstream os;
  write_netpbm(os, img);
  return os.str();
}

}  // namespace

TEST_CASE("netpbm round trip stays within the quantization bound") {
  for (std::size_t c : {1ul, 3ul}) {
    auto t = rnd<double>({c, 7, 9}, 3 + c);
    auto img = tensor_to_image(t);
    std::stringstream ss(netpbm_bytes(img));
    auto back = image_to_tensor<double>(read_netpbm(ss));
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      CHECK(std::abs(back[i] - t[i]) <= 0.5 / 255 + 1e-12);
  }
}

TEST_CASE("quantization clamps and rounds half to even") {
  Tensor<double> t({1, 1, 4}, {-0.25, 1.75, 1.5 / 255.0, 2.5 / 255.0});
  auto img = tensor_to_image(t);
  CHECK(img.bytes[0] == 0);    // clamped low
  CHECK(img.bytes[1] == 255);  // clamped high
  CHECK(img.bytes[2] == 2);    // 1.5 rounds to even 2
  CHECK(img.bytes[3] == 2);    // 2.5 rounds to even 2
}

TEST_CASE("netpbm header handling") {
  auto t = rnd<double>({1, 4, 4}, 11);
  std::string good = netpbm_bytes(tensor_to_image(t));

  std::stringstream bad_magic("P4\n4 4\n255\n" + good.substr(good.size() - 16));
  CHECK_THROWS_AS(read_netpbm(bad_magic), std::runtime_error);

  std::stringstream bad_maxval("P5\n4 4\n65535\n" + good.substr(good.size() - 16));
  CHECK_THROWS_AS(read_netpbm(bad_maxval), std::runtime_error);

  std::stringstream truncated(good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(read_netpbm(truncated), std::runtime_error);

  // comments and whitespace are fine
  std::stringstream commented("P5\n# a comment\n 4\t4 \n255\n" + good.substr(good.size() - 16));
  auto img = read_netpbm(commented);
  CHECK(img.width == 4);
  CHECK(img.height == 4);
}

TEST_CASE("rsvh dump round trip, both dtypes") {
  auto td = rnd<double>({2, 3, 4}, 13, -5.0, 5.0);
  std::stringstream sd;
  write_rsvh(sd, td);
  auto back = read_rsvh<double>(sd);
  CHECK(back.shape() == td.shape());
  CHECK(back.values() == td.values());

  auto tf = rnd<float>({5}, 17, -5.0, 5.0);
  std::stringstream sf;
  write_rsvh(sf, tf);
  CHECK(read_rsvh<float>(sf).values() == tf.values());

  // rank-0 scalars survive
  std::stringstream s0;
  write_rsvh(s0, Tensor<double>::scalar(2.5));
  CHECK(read_rsvh<double>(s0).item() == 2.5);
}

TEST_CASE("rsvh rejects mismatches and corruption") {
  auto t = rnd<float>({4}, 19);
  std::stringstream ss;
  write_rsvh(ss, t);
  CHECK_THROWS_AS(read_rsvh<double>(ss), std::runtime_error);  // dtype mismatch

  std::stringstream bad("XXXX????");
  CHECK_THROWS_AS(read_rsvh_header(bad), std::runtime_error);

  std::stringstream ss2;
  write_rsvh(ss2, t);
  std::string bytes = ss2.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(read_rsvh<float>(cut), std::runtime_error);
}

TEST_CASE("named tensor table round trip") {
  NamedTensors<float> table;
  table.emplace("alpha", rnd<float>({2, 2}, 23));
  table.emplace("beta/gamma", rnd<float>({7}, 29));
  std::stringstream ss;
  write_tensor_table(ss, table);
  auto back = read_tensor_table<float>(ss);
  REQUIRE(back.size() == 2);
  CHECK(back.at("alpha").values() == table.at("alpha").values());
  CHECK(back.at("beta/gamma").values() == table.at("beta/gamma").values());
}

TEST_CASE("config parsing") {
  std::stringstream ss(
      "# comment line\n"
      "alpha = 3\n"
      "  beta.gamma =  hello world \n"
      "flag = true   # trailing comment\n"
      "\n");
  auto cfg = parse_config_text(ss);
  CHECK(cfg.at("alpha") == "3");
  CHECK(cfg.at("beta.gamma") == "hello world");
  CHECK(cfg.at("flag") == "true");

  std::stringstream dup("a = 1\na = 2\n");
  CHECK_THROWS_AS(parse_config_text(dup), std::runtime_error);
  std::stringstream noeq("just words\n");
  CHECK_THROWS_AS(parse_config_text(noeq), std::runtime_error);

  ConfigView view(cfg);
  CHECK(view.take_long("alpha", 0) == 3);
  CHECK(view.take_bool("flag", false) == true);
  CHECK(view.take_str("beta.gamma", "") == "hello world");
  view.expect_empty();

  ConfigView unknown(ConfigMap{{"mystery", "1"}});
  CHECK_THROWS_AS(unknown.expect_empty(), std::runtime_error);

  ConfigView badnum(ConfigMap{{"n", "abc"}});
  CHECK_THROWS_AS(badnum.take_long("n", 0), std::runtime_error);
}

TEST_CASE("canonical config text is sorted and stable") {
  ConfigMap cfg{{"zeta", "1"}, {"alpha", "2"}};
  CHECK(canonical_config_text(cfg) == "alpha = 2\nzeta = 1\n");
}

TEST_CASE("synthetic pairs write byte-identical files for equal seeds") {
  auto a = synth_pair<double>(99, 32);
  auto b = synth_pair<double>(99, 32);
  CHECK(netpbm_bytes(tensor_to_image(a.optical)) == netpbm_bytes(tensor_to_image(b.optical)));
  CHECK(netpbm_bytes(tensor_to_image(a.sar)) == netpbm_bytes(tensor_to_image(b.sar)));
  auto c = synth_pair<double>(100, 32);
  CHECK(netpbm_bytes(tensor_to_image(a.optical)) != netpbm_bytes(tensor_to_image(c.optical)));
}
