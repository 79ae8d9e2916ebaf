#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "whittle_cache/error.hpp"
#include "whittle_cache/workload.hpp"

using namespace wcache;

namespace {

ParsedTrace parse(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in, "inline");
}

}  // namespace

TEST_CASE("zipf examples") {
  const auto uniform = zipf_workload(4, 0.0, 4.0);
  for (double r : uniform.rates) CHECK(r == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(zipf_workload(1, 0.9, 7.5).rates == std::vector<double>{7.5});
  const auto h = zipf_workload(3, 1.0, 11.0);
  CHECK(h.rates[0] == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(h.rates[1] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(h.rates[2] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(h.labels == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(h.source.find("zipf") == 0);
}

TEST_CASE("zipf validation") {
  CHECK_THROWS_AS(zipf_workload(0, 0.9, 1.0), InvalidArgument);
  CHECK_THROWS_AS(zipf_workload(3, -0.1, 1.0), InvalidArgument);
  CHECK_THROWS_AS(zipf_workload(3, 0.9, 0.0), InvalidArgument);
}

TEST_CASE("property: zipf rates normalise and decrease with rank") {
  std::mt19937_64 gen(301);
  std::uniform_int_distribution<int> count(1, 5000);
  std::uniform_real_distribution<double> kappa(0.01, 3.0);
  std::uniform_real_distribution<double> total(0.1, 1e4);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = total(gen);
    const auto w = zipf_workload(count(gen), kappa(gen), t);
    const double sum = std::accumulate(w.rates.begin(), w.rates.end(), 0.0);
    CHECK(std::abs(sum - t) <= 1e-9 * std::max(1.0, t));
    for (std::size_t m = 1; m < w.rates.size(); ++m) CHECK(w.rates[m] <= w.rates[m - 1]);
    for (double r : w.rates) CHECK(r > 0.0);
  }
}

TEST_CASE("property: zipf sums to the total exactly enough") {
  std::mt19937_64 gen(302);
  std::uniform_int_distribution<int> count(1, 2000);
  std::uniform_real_distribution<double> kappa(0.0, 2.0);
  std::uniform_real_distribution<double> total(0.1, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = total(gen);
    const auto w = zipf_workload(count(gen), kappa(gen), t);
    CHECK(std::abs(std::accumulate(w.rates.begin(), w.rates.end(), 0.0) - t) <= 1e-9 * t);
  }
}

TEST_CASE("trace rate estimate") {
  const auto t = parse("timestamp,content_id\n0,7\n10,7\n");
  REQUIRE(t.workload.labels == std::vector<std::uint64_t>{7});
  CHECK(t.workload.rates[0] == doctest::Approx(0.2));
  CHECK(t.t_first == 0.0);
  CHECK(t.t_last == 10.0);
  CHECK(t.workload.source == "trace(inline)");
}

TEST_CASE("rates use the whole trace window") {
  const auto t = parse("# comment\ntimestamp,content_id\n\n2,5\n3,1\n# mid comment\n4,5\n6,1\n12,9\n");
  REQUIRE(t.workload.labels == std::vector<std::uint64_t>{1, 5, 9});
  CHECK(t.workload.rates[0] == doctest::Approx(0.2));
  CHECK(t.workload.rates[1] == doctest::Approx(0.2));
  CHECK(t.workload.rates[2] == doctest::Approx(0.1));
  CHECK(t.events.size() == 5);
}

TEST_CASE("empty traces") {
  CHECK_THROWS_AS(parse(""), EmptyTrace);
  CHECK_THROWS_AS(parse("timestamp,content_id\n"), EmptyTrace);
  CHECK_THROWS_AS(parse("# only comments\n\n"), EmptyTrace);
  CHECK_THROWS_AS(parse("timestamp,content_id\nbad,line\n"), EmptyTrace);
}

TEST_CASE("malformed and out-of-order lines") {
  const auto t = parse("timestamp,content_id\n0,1\nnope\n1.5,x\n-2,3\n2,-1\n3,2\r\n4 , 2\n");
  CHECK(t.malformed_lines == 4);
  CHECK(t.events.size() == 3);

  try {
    (void)parse("timestamp,content_id\n0,1\n5,1\n# c\n4,2\n");
    FAIL("expected NonMonotonicTimestamps");
  } catch (const NonMonotonicTimestamps& e) {
    CHECK(e.line() == 5);
  }
  CHECK_THROWS_AS(parse("time,id\n0,1\n1,1\n"), ParseError);
  CHECK_THROWS_AS(parse("timestamp,content_id\n3,1\n3,2\n"), ParseError);  // zero-length window
  // equal timestamps are allowed as long as the window is positive
  CHECK(parse("timestamp,content_id\n1,1\n1,2\n2,1\n").events.size() == 3);
}

TEST_CASE("loading a missing file is an io error") {
  CHECK_THROWS_AS(load_trace("/nonexistent/dir/trace.csv"), IoError);
}

TEST_CASE("generated traces are ordered and round-trip through the parser") {
  Workload w;
  w.rates = {2.0};
  w.labels = {42};
  Rng rng(303);
  const auto events = generate_trace(w, 1e4, rng);
  for (std::size_t i = 1; i < events.size(); ++i) REQUIRE(events[i].timestamp >= events[i - 1].timestamp);
  for (const auto& e : events) REQUIRE(e.timestamp < 1e4);
  std::stringstream buf;
  write_trace(buf, events);
  const auto parsed = parse_trace(buf);
  REQUIRE(parsed.events.size() == events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    REQUIRE(parsed.events[i].timestamp == events[i].timestamp);  // shortest round-trip formatting
    REQUIRE(parsed.events[i].content_id == 42u);
  }
  CHECK(std::abs(parsed.workload.rates[0] - 2.0) <= 0.05);
}

TEST_CASE("property: round trip recovers zipf rates within sampling error") {
  std::mt19937_64 gen(304);
  for (int trial = 0; trial < 10; ++trial) {
    const auto w = zipf_workload(5 + static_cast<int>(gen() % 10), 0.9, 30.0);
    Rng rng(gen());
    const double horizon = 2000.0;
    std::stringstream buf;
    write_trace(buf, generate_trace(w, horizon, rng));
    const auto parsed = parse_trace(buf);
    for (std::size_t i = 0; i < parsed.workload.labels.size(); ++i) {
      const double truth = w.rates[parsed.workload.labels[i]];
      // five standard errors of a Poisson count over the window
      CHECK(std::abs(parsed.workload.rates[i] - truth) <= 5.0 * std::sqrt(truth / horizon) + 1e-3);
    }
  }
}

TEST_CASE("generation validates its inputs") {
  Rng rng(1);
  Workload w;
  w.rates = {1.0};
  w.labels = {0};
  CHECK_THROWS_AS(generate_trace(w, 0.0, rng), InvalidArgument);
  w.rates = {-1.0};
  CHECK_THROWS_AS(generate_trace(w, 10.0, rng), InvalidArgument);
  w.rates = {1.0, 2.0};
  CHECK_THROWS_AS(generate_trace(w, 10.0, rng), InvalidArgument);
  w.rates = {0.0};
  CHECK(generate_trace(w, 10.0, rng).empty());
}

TEST_CASE("trace file on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "whittle_cache_workload_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "t.csv").string();
  {
    std::ofstream out(path);
    out << "timestamp,content_id\n0.5,3\n2.5,4\n4.5,3\n";
  }
  const auto t = load_trace(path);
  CHECK(t.workload.source == "trace(" + path + ")");
  CHECK(t.workload.rates[0] == doctest::Approx(0.5));
  std::filesystem::remove_all(dir);
}
