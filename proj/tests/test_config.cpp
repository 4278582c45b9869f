#include <string>

#include "doctest.h"
#include "stmchain/config.hpp"

using namespace stmchain;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_config_yaml(yaml);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config round trip is the identity for every protocol") {
  for (const std::string p : {"autonomous", "field-scan", "tip-scan", "rf-sweep", "oct", "prepare", "full"}) {
    auto c = default_config(p);
    c.system.field.b = Vec3(0.001, -0.002, 0.0537);
    c.oct.krotov.lambda = 0.0123456789012345;
    c.tip_scan.alpha_list = {0.25, 0.5, 1.0};
    const auto yaml = config_to_yaml(c);
    const auto back = parse_config_yaml(yaml);
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_to_yaml(back) == yaml);
  }
}

TEST_CASE("unknown keys are rejected with their path") {
  const auto msg = error_of("protocol: oct\nsystem:\n  n_chain: 4\n  spin_orbit: 1\n");
  CHECK(msg.find("system.spin_orbit") != std::string::npos);
  CHECK(error_of("protocol: oct\nextra: 1\n").find("extra") != std::string::npos);
}

TEST_CASE("quantities with units convert to the key's unit") {
  const auto c = parse_config_yaml(
      "protocol: rf-sweep\n"
      "system:\n  tip_height_A: 500 pm\n  field_T: [0, 0, 50 mT]\n  dzz_meV: -50 ueV\n"
      "rf:\n  v_rf_V: 40 mV\n  omega_max_rad_per_ns: 1 GHz\n"
      "time:\n  t_max_ns: 0.1 us\n");
  CHECK(c.system.geometry.tip_height == doctest::Approx(5.0));
  CHECK(c.system.field.b.z() == doctest::Approx(0.05));
  CHECK(c.system.anisotropy.dzz == doctest::Approx(-0.05));
  CHECK(c.rf.v_rf == doctest::Approx(0.04));
  CHECK(c.rf.omega_max == doctest::Approx(2.0 * 3.14159265358979));
  CHECK(c.time.t_max == doctest::Approx(100.0));
}

TEST_CASE("unit mismatches name the offending key") {
  const auto msg = error_of("protocol: tip-scan\nsystem:\n  tip_height_A: 5 ns\n");
  CHECK(msg.find("system.tip_height_A") != std::string::npos);
  CHECK(msg.find("ns") != std::string::npos);
  CHECK(error_of("protocol: oct\noct:\n  times_ns: [60, 3 T]\n").find("oct.times_ns[1]") != std::string::npos);
  CHECK_THROWS_AS(parse_quantity(nlohmann::json("7 furlongs"), "A", "x"), ConfigError);
  CHECK(parse_quantity(nlohmann::json(3.5), "A", "x") == doctest::Approx(3.5));
}

TEST_CASE("type and range errors") {
  CHECK(error_of("protocol: oct\nsystem:\n  n_chain: 2.5\n").find("system.n_chain") != std::string::npos);
  CHECK(error_of("protocol: oct\nsystem:\n  n_chain: 0\n").find("system.n_chain") != std::string::npos);
  CHECK(error_of("protocol: teleport\n").find("protocol") != std::string::npos);
  CHECK(error_of("protocol: [oct\n") != "");
}

TEST_CASE("dotted overrides") {
  const auto base = default_config("oct");
  const auto c = apply_overrides(base, {"system.tip_height_A=5.75", "oct.times_ns=[40, 60]", "system.field_T=[0, 0, 80 mT]"});
  CHECK(c.system.geometry.tip_height == doctest::Approx(5.75));
  REQUIRE(c.oct.times.size() == 2);
  CHECK(c.oct.times[1] == doctest::Approx(60.0));
  CHECK(c.system.field.b.z() == doctest::Approx(0.08));
  CHECK_THROWS_AS(apply_overrides(base, {"system.nope=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"no_equals_sign"}), ConfigError);
}

TEST_CASE("protocol defaults") {
  CHECK_FALSE(default_config("autonomous").system.geometry.with_tip);
  CHECK(default_config("field-scan").system.geometry.n_chain == 3);
  CHECK(default_config("tip-scan").system.geometry.with_tip);
  CHECK(default_config("oct").system.geometry.n_chain == 4);
  CHECK(default_config("oct").system.geometry.tip_height == doctest::Approx(8.0));
  CHECK(default_config("prepare").prepare.tip_height == doctest::Approx(5.0));
}
