#include <string>

#include "doctest.h"
#include "medfuse/registry.hpp"

using namespace medfuse;

namespace {

// Remove one whole variable block from the registry text.
std::string drop_variable(const std::string& text, const std::string& name) {
  const std::string marker = "variable " + name;
  const std::size_t start = text.find(marker);
  REQUIRE(start != std::string::npos);
  std::size_t end = text.find("\nvariable ", start + 1);
  if (end == std::string::npos) end = text.size();
  return text.substr(0, start) + text.substr(end == text.size() ? end : end + 1);
}

std::string replace_once(const std::string& text, const std::string& from, const std::string& to) {
  const std::size_t pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  std::string out = text;
  out.replace(pos, from.size(), to);
  return out;
}

}  // namespace

TEST_SUITE("registry") {

TEST_CASE("shipped registry is valid with width 76") {
  const VariableRegistry& reg = default_registry();
  CHECK(reg.total_width == 76);
  CHECK(reg.variables.size() == 17);
  Index n_cat = 0, n_cont = 0, value_cols = 0;
  for (const RegistryVariable& v : reg.variables) {
    if (v.kind == VariableKind::categorical) {
      ++n_cat;
      CHECK(v.column_count == static_cast<Index>(v.categories.size()));
      CHECK(v.normal_category >= 0);
    } else {
      ++n_cont;
      CHECK(v.stddev > 0.0);
    }
    value_cols += v.column_count;
  }
  CHECK(n_cat == 5);
  CHECK(n_cont == 12);
  CHECK(value_cols + 17 == 76);
}

TEST_CASE("registry hash fingerprints the text") {
  const VariableRegistry& reg = default_registry();
  CHECK(reg.hash == hex64(fnv1a64(default_registry_text())));
  CHECK(reg.hash.size() == 16);
  const VariableRegistry again = parse_registry_text(default_registry_text());
  CHECK(again.hash == reg.hash);
}

TEST_CASE("a 16-variable registry is rejected naming the count") {
  const std::string broken = drop_variable(default_registry_text(), "glucose");
  try {
    parse_registry_text(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("16") != std::string::npos);
  }
}

TEST_CASE("overlapping column ranges are rejected naming both ranges") {
  // heart_rate occupies column 50; move glucose (49) onto it.
  const std::string broken =
      replace_once(default_registry_text(), "columns 49 1", "columns 50 1");
  try {
    parse_registry_text(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("overlapping column ranges") != std::string::npos);
    CHECK(msg.find("[50, 51)") != std::string::npos);
    CHECK(msg.find("glucose") != std::string::npos);
    CHECK(msg.find("heart_rate") != std::string::npos);
  }
}

TEST_CASE("duplicate names are rejected") {
  const std::string broken =
      replace_once(default_registry_text(), "variable glucose", "variable heart_rate");
  try {
    parse_registry_text(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
}

TEST_CASE("missing normal value is rejected") {
  const std::string broken = replace_once(default_registry_text(), "normal 128.0\n", "");
  CHECK_THROWS_AS(parse_registry_text(broken), ValidationError);
}

TEST_CASE("categorical normal must be a listed category") {
  const std::string broken =
      replace_once(default_registry_text(), "normal spontaneously", "normal closed");
  try {
    parse_registry_text(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("closed") != std::string::npos);
  }
}

TEST_CASE("every violation is listed, not just the first") {
  std::string broken = replace_once(default_registry_text(), "std 58.0", "std -1.0");
  broken = replace_once(broken, "normal 86.0", "normal not_a_number");
  try {
    parse_registry_text(broken);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("glucose") != std::string::npos);
    CHECK(msg.find("heart_rate") != std::string::npos);
  }
}

TEST_CASE("file round trip via validate_registry") {
  const std::string path = "/tmp/medfuse_test_registry.txt";
  write_registry_file(path, default_registry_text());
  const VariableRegistry reg = validate_registry(path);
  CHECK(reg.total_width == 76);
  CHECK(reg.hash == default_registry().hash);
  CHECK_THROWS_AS(validate_registry("/tmp/does_not_exist_medfuse.txt"), IoError);
}

}  // TEST_SUITE
