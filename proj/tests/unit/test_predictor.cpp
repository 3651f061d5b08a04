#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "counterlens/predictor.hpp"
#include "mock_chat.hpp"

using namespace counterlens;
using counterlens::testing::MockChatServer;
using counterlens::testing::ScriptedReply;

namespace {

const char* kFlags = "--std=c++17 -O3 -ffast-math";

NormalizedCounters sample_values() {
  const double v[] = {0.002, 0.002, 0.004, 0.459, 0.459, 0.459, 0.089, 0.070, 0.022, 0.022, 0.500, 0.370};
  NormalizedCounters n;
  for (auto id : kAllMetrics) n.set(id, v[index_of(id)]);
  return n;
}

std::string sample_block() { return serialize_counter_block(sample_values(), kFlags, "gfx90a"); }

std::string sample_answer() { return assistant_text("gfx90a", kFlags, sample_block()); }

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return text.replace(at, from.size(), to);
}

ExtractionKind kind_of(const std::string& text, ExtractOptions opts = {}) {
  try {
    extract_json(text, opts);
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.raw_text(), text);
    return e.kind();
  }
  ADD_FAILURE() << "no extraction error";
  return ExtractionKind::NoBlock;
}

GeneratedKernel some_kernel(std::uint64_t seed) {
  KernelGenSpec s;
  s.num_inputs = 2;
  s.num_loads = 3;
  s.num_compute = 4;
  s.num_stores = 2;
  s.num_outputs = 2;
  s.seed = seed;
  return generate(s);
}

PredictRequest request(std::string source, std::string arch = "gfx90a", std::uint64_t id = 1) {
  return {std::move(source), std::move(arch), kFlags, id};
}

ChatEndpoint endpoint(const std::string& url, double timeout_s = 2.0) {
  ChatEndpoint e;
  e.url = url;
  e.model = "m";
  e.timeout_s = timeout_s;
  e.max_retries = 0;
  e.backoff_ms = 1;
  return e;
}

}  // namespace

TEST(Extract, RenderedBlockRoundTrips) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    NormalizedCounters n;
    for (auto id : kAllMetrics) n.set(id, static_cast<double>(uniform_below(rng, 1001)) / 1000.0);
    const auto e = extract_json(assistant_text("gfx942", "-O2", serialize_counter_block(n, "-O2", "gfx942")));
    EXPECT_EQ(e.normalized, n);
    EXPECT_EQ(e.compiler_flags, "-O2");
    EXPECT_EQ(e.architecture, "gfx942");
  }
}

TEST(Extract, BareObjectWithoutFence) {
  EXPECT_EQ(extract_json("Sure. " + sample_block() + " Done.").normalized, sample_values());
}

TEST(Extract, DistinctFailureKinds) {
  EXPECT_EQ(kind_of("I cannot answer that."), ExtractionKind::NoBlock);
  EXPECT_EQ(kind_of(sample_answer() + "\n" + sample_answer()), ExtractionKind::Ambiguous);
  EXPECT_EQ(kind_of("```json\n{\"a\": \n```"), ExtractionKind::InvalidJson);
  EXPECT_EQ(kind_of("```json\n[1, 2]\n```"), ExtractionKind::InvalidJson);
  EXPECT_EQ(kind_of(replace(sample_answer(), "\"L2_Cache_Hit_Rate\": \"0.370\"", "\"Extra\": \"0.370\"")),
            ExtractionKind::ExtraKey);
  EXPECT_EQ(kind_of(replace(sample_answer(), ",\n\"L2_Cache_Hit_Rate\": \"0.370\"", "")), ExtractionKind::MissingKey);
  EXPECT_EQ(kind_of(replace(sample_answer(), "\"0.370\"", "\"high\"")), ExtractionKind::NonNumeric);
  EXPECT_EQ(kind_of(replace(sample_answer(), "\"0.370\"", "0.370")), ExtractionKind::NonNumeric);
  EXPECT_EQ(kind_of(replace(sample_answer(), "\"0.370\"", "\"1.200\"")), ExtractionKind::OutOfRange);
}

TEST(Extract, ErrorNamesOffendingKey) {
  try {
    extract_json(replace(sample_answer(), "\"0.370\"", "\"high\""));
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.key(), "L2_Cache_Hit_Rate");
  }
}

TEST(Extract, LenientModeToleratesLooseOutput) {
  const auto text = replace(replace(sample_answer(), "\"0.370\"", "0.37"), "\"architecture\": \"gfx90a\",\n", "");
  EXPECT_EQ(kind_of(text), ExtractionKind::NonNumeric);
  const auto e = extract_json(text, {true});
  EXPECT_NEAR(e.normalized.at(MetricId::L2_Cache_Hit_Rate), 0.37, 1e-15);
  EXPECT_FALSE(e.architecture.has_value());
  const auto partial = extract_json("```json\n{\"HBM_GFLOPS\": \"0.5\", \"note\": \"x\"}\n```", {true});
  EXPECT_EQ(partial.normalized.size(), 1u);
}

TEST(Oracle, AgreesWithOracleFunction) {
  OracleBackend oracle;
  const auto ranges = NormRanges::defaults();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto k = some_kernel(seed);
    for (const auto& arch : {"gfx90a", "gfx942"}) {
      const auto expected = quantize(normalize(oracle_counters(k, *find_peaks(arch), 0.8), ranges));
      const auto r = predict(oracle, request(k.source, arch, seed), ranges);
      EXPECT_EQ(r.normalized, expected);
      EXPECT_EQ(r.physical, denormalize(expected, ranges));
      EXPECT_EQ(r.request_id, seed);
      EXPECT_TRUE(r.warnings.empty());
      EXPECT_EQ(r.roofline.size(), 3u);
    }
  }
}

TEST(Oracle, RefusesForeignSourcesAndArchitectures) {
  OracleBackend oracle;
  EXPECT_THROW(predict(oracle, request("int main() { return 0; }"), NormRanges::defaults()), OracleUnavailable);
  EXPECT_THROW(predict(oracle, request(some_kernel(1).source, "gfx1100"), NormRanges::defaults()),
               UnsupportedArchitecture);
  EXPECT_THROW(predict(oracle, request(""), NormRanges::defaults()), DataError);
}

TEST(Remote, PublishedAnswerYieldsPhysicalCounters) {
  MockChatServer server({{200, sample_answer(), {}, 0, {}}});
  RemoteBackend backend({"remote", endpoint(server.url())});
  const auto r = predict(backend, request("int main() {}"), NormRanges::defaults());
  EXPECT_NEAR(r.physical.at(MetricId::L2_Cache_Hit_Rate), 37.0, 1e-9);
  EXPECT_NEAR(r.physical.at(MetricId::L1_Cache_Hit_Rate), 50.0, 1e-9);
  EXPECT_EQ(r.backend, "remote");
  EXPECT_TRUE(r.warnings.empty());
  const auto sent = server.requests().at(0);
  EXPECT_EQ(sent["temperature"], 0.0);
  EXPECT_EQ(sent["messages"][0]["content"], std::string(kPredictSystemPrompt));
}

TEST(Remote, PromptMatchesTrainingRecordByteForByte) {
  LabeledSample s;
  s.source = "// ünïcode\r\n__global__ void k() {}\n\n";
  s.config.architecture = "gfx942";
  s.config.compiler_flags = {"-O3", "-ffast-math"};
  s.counters = denormalize(sample_values(), NormRanges::defaults());
  const auto t = render_sample(s, NormRanges::defaults());
  const auto msgs = RemoteBackend::messages({s.source, "gfx942", "-O3 -ffast-math", 0});
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].content, t.system);
  EXPECT_EQ(msgs[1].content, t.user);
}

TEST(Remote, MissingBlockCarriesRawText) {
  MockChatServer server({{200, "The kernel is memory bound.", {}, 0, {}}});
  RemoteBackend backend({"remote", endpoint(server.url())});
  try {
    predict(backend, request("int main() {}"), NormRanges::defaults());
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.kind(), ExtractionKind::NoBlock);
    EXPECT_EQ(e.raw_text(), "The kernel is memory bound.");
  }
}

TEST(Remote, EchoMismatchIsWarningOnly) {
  MockChatServer server({{200, assistant_text("gfx942", "-O0", serialize_counter_block(sample_values(), "-O0", "gfx942")),
                          {}, 0, {}}});
  RemoteBackend backend({"remote", endpoint(server.url())});
  const auto r = predict(backend, request("int main() {}"), NormRanges::defaults());
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_EQ(r.normalized, sample_values());
}

TEST(Remote, TimeoutAndUnavailable) {
  MockChatServer slow({}, {200, sample_answer(), {}, 1500, {}});
  RemoteBackend timed({"remote", endpoint(slow.url(), 0.3)});
  EXPECT_THROW(predict(timed, request("x"), NormRanges::defaults()), BackendTimeout);

  RemoteBackend down({"down", endpoint("http://127.0.0.1:" + std::to_string(counterlens::testing::closed_port()))});
  EXPECT_FALSE(down.probe());
  EXPECT_THROW(predict(down, request("x"), NormRanges::defaults()), BackendUnavailable);
}

TEST(Remote, ArchitectureCapabilityChecked) {
  RemoteBackend::Config c{"remote", endpoint("http://127.0.0.1:1")};
  c.architectures = {"gfx90a"};
  RemoteBackend backend(c);
  EXPECT_THROW(predict(backend, request("x", "gfx942"), NormRanges::defaults()), UnsupportedArchitecture);
}

TEST(Predict, ResponseJsonShape) {
  TextBackend backend("text", [](const PredictRequest&) { return sample_answer(); });
  const auto j = predict(backend, request("x", "gfx90a", 42), NormRanges::defaults()).to_json();
  EXPECT_EQ(j["request_id"], 42);
  EXPECT_EQ(j["normalized"]["L2_Cache_GFLOPS"], "0.459");
  EXPECT_EQ(j["normalized"]["L2_Cache_Bandwidth"], "0.070");
  EXPECT_EQ(j["physical"]["L1_Cache_Hit_Rate"]["unit"], "%");
  EXPECT_EQ(j["roofline"].size(), 3u);
  EXPECT_EQ(j["roofline"][2]["level"], "HBM");
  EXPECT_GE(j["latency_ms"].get<double>(), 0.0);
}

TEST(Registry, DefaultsDuplicatesAndHealth) {
  BackendRegistry reg;
  reg.add(std::make_shared<OracleBackend>());
  reg.add(std::make_shared<RemoteBackend>(
      RemoteBackend::Config{"down", endpoint("http://127.0.0.1:" + std::to_string(counterlens::testing::closed_port()))}));
  EXPECT_EQ(reg.default_id(), "oracle");
  EXPECT_THROW(reg.add(std::make_shared<OracleBackend>()), ConfigError);
  EXPECT_THROW(reg.set_default("nope"), ConfigError);
  reg.set_default("down");
  EXPECT_EQ(reg.default_id(), "down");
  EXPECT_EQ(reg.find("nope"), nullptr);

  const auto d = reg.descriptors();
  ASSERT_EQ(d.size(), 2u);
  EXPECT_TRUE(d[0].healthy);
  EXPECT_EQ(d[0].kind, BackendKind::Oracle);
  EXPECT_EQ(d[0].architectures, (std::vector<std::string>{"gfx90a", "gfx942"}));
  EXPECT_FALSE(d[1].healthy);
  EXPECT_FALSE(reg.cached_health("down"));
  EXPECT_TRUE(reg.cached_health("oracle"));
}

TEST(Registry, SerialBackendsAreNeverCalledConcurrently) {
  std::atomic<int> inflight{0}, peak{0};
  auto backend = std::make_shared<TextBackend>(
      "serial",
      [&](const PredictRequest&) {
        const int now = ++inflight;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --inflight;
        return sample_answer();
      },
      false);
  BackendRegistry reg;
  reg.add(backend);
  auto wrapped = reg.find("serial");
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] { predict(*wrapped, request("x"), NormRanges::defaults()); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(peak.load(), 1);
}
