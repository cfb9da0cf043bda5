#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "memefuse/abduction.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <nlohmann/json.hpp>

#include "memefuse/errors.hpp"
#include "test_support.hpp"

namespace memefuse {
namespace {

using testing::TempDir;

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(MEMEFUSE_GOLDEN_DIR) + "/" + name, std::ios::binary);
  EXPECT_TRUE(in) << name;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RetryPolicy fast_retry(int attempts = 3) {
  RetryPolicy r;
  r.max_attempts = attempts;
  r.base_delay = std::chrono::milliseconds(1);
  return r;
}

struct Corpus {
  Dataset train = make_fixture_set(7, 4);
  CaptionCache captions;
  Corpus() { caption_dataset(train, "stub", captions); }
};

TEST(Prompts, SystemPromptMatchesGolden) {
  EXPECT_EQ(render_system_prompt(), read_golden("system_prompt.txt"));
  EXPECT_TRUE(render_system_prompt().starts_with("You have been specially designed to perform abductive reasoning"));
}

TEST(Prompts, UserPromptMatchesGolden) {
  EXPECT_EQ(render_user_prompt("you either die a hero or live long enough to see yourself become the villain",
                               "a man celebrating", Label::harmless),
            read_golden("user_prompt_harmless.txt"));
  EXPECT_EQ(render_user_prompt("the referee deserve to be mocked", "a sleepy doctor on a beach", Label::harmful),
            read_golden("user_prompt_harmful.txt"));
}

TEST(Prompts, UserPromptShape) {
  const std::string p = render_user_prompt("you either die a hero...", "a man celebrating", Label::harmless);
  EXPECT_NE(p.find("Given a Text: \"you either die a hero...\""), std::string::npos);
  EXPECT_TRUE(p.ends_with("reasoned as harmless."));
  EXPECT_NE(p.find("harmfulness label harmless,"), std::string::npos);
  EXPECT_EQ(p, render_user_prompt("you either die a hero...", "a man celebrating", Label::harmless));
}

TEST(Prompts, RejectsBlankInputs) {
  EXPECT_THROW(render_user_prompt("", "cap", Label::harmful), ArgumentError);
  EXPECT_THROW(render_user_prompt("text", "  ", Label::harmful), ArgumentError);
}

TEST(Prompts, BundleDecodingParameters) {
  const PromptBundle b = make_bundle("t", "c", Label::harmful);
  EXPECT_EQ(b.temperature, 0.0);
  EXPECT_EQ(b.max_tokens, 256);
  EXPECT_EQ(b.system, render_system_prompt());
}

TEST(Prompts, HashCoversDecodingParameters) {
  PromptBundle a = make_bundle("t", "c", Label::harmful);
  PromptBundle b = a;
  EXPECT_EQ(a.hash(), b.hash());
  b.temperature = 0.7;
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  b.max_tokens = 128;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Prompts, NoHashCollisionsOverFixtureCorpus) {
  const Dataset ds = make_fixture_set(7, 40);
  CaptionCache captions;
  caption_dataset(ds, "stub", captions);
  std::set<std::string> hashes;
  std::size_t bundles = 0;
  for (const auto& s : ds.samples)
    for (Label y : {Label::harmful, Label::harmless}) {
      hashes.insert(make_bundle(s.text, *captions.find(s.id, "stub"), y).hash());
      ++bundles;
    }
  EXPECT_EQ(hashes.size(), bundles);
}

TEST(Validation, DeclarationPatterns) {
  EXPECT_FALSE(validate_rationale("The label is harmful because it mocks a group.", Label::harmful));
  EXPECT_FALSE(validate_rationale("This meme is labeled as harmless.", Label::harmless));
  EXPECT_FALSE(validate_rationale("It would be classified as harmful by most readers.", Label::harmful));
  EXPECT_FALSE(validate_rationale("Harmless: the joke is benign", Label::harmless));
  EXPECT_FALSE(validate_rationale("  HARMFUL : mocking", Label::harmful));
  EXPECT_TRUE(validate_rationale("perpetuates harmful stereotypes and generalizations", Label::harmful));
  EXPECT_TRUE(validate_rationale("a harmless pun about cats", Label::harmless));
  EXPECT_TRUE(validate_rationale("the labels on the jars are wrong", Label::harmless));
}

TEST(RequestRationale, CachesByPromptHash) {
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int) { return std::string("R1"); });
  ChatClient client(t, fast_retry());
  const PromptBundle b = make_bundle("t", "c", Label::harmful);
  const RationaleRecord a = request_rationale(client, b, "m1");
  const RationaleRecord again = request_rationale(client, b, "m1");
  EXPECT_EQ(t->calls(), 1);
  EXPECT_EQ(client.upstream_calls(), 1);
  EXPECT_EQ(a.rationale, "R1");
  EXPECT_EQ(a.prompt_hash, b.hash());
  EXPECT_EQ(again.rationale, a.rationale);
  EXPECT_EQ(again.attempt, a.attempt);
}

TEST(RequestRationale, RetriesTransientFailures) {
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int i) -> std::string {
    if (i < 2) throw TransportError("flaky");
    return "ok";
  });
  ChatClient client(t, fast_retry(3));
  const RationaleRecord r = request_rationale(client, make_bundle("t", "c", Label::harmless));
  EXPECT_EQ(r.rationale, "ok");
  EXPECT_EQ(r.attempt, 3);
}

TEST(RequestRationale, ExhaustedRetries) {
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int) -> std::string {
    throw TransportError("down");
  });
  ChatClient client(t, fast_retry(3));
  EXPECT_THROW(request_rationale(client, make_bundle("t", "c", Label::harmless)), TransportError);
  EXPECT_EQ(t->calls(), 3);
}

TEST(RequestRationale, NonTransientErrorsAreNotRetried) {
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int) -> std::string {
    throw ConfigError("bad key");
  });
  ChatClient client(t, fast_retry(3));
  EXPECT_THROW(request_rationale(client, make_bundle("t", "c", Label::harmless)), ConfigError);
  EXPECT_EQ(t->calls(), 1);
}

TEST(RequestRationale, EmptyResponse) {
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int) { return std::string("  \n"); });
  ChatClient client(t, fast_retry());
  EXPECT_THROW(request_rationale(client, make_bundle("t", "c", Label::harmless)), EmptyRationaleError);
}

TEST(RequestRationale, OfflineWithoutCache) {
  ChatClient client(nullptr);
  try {
    request_rationale(client, make_bundle("t", "c", Label::harmless));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("configure a chat client"), std::string::npos);
  }
}

TEST(RequestRationale, OfflineServesCacheHits) {
  const PromptBundle b = make_bundle("t", "c", Label::harmless);
  ChatClient client(nullptr);
  client.cache().put({"m9", "cached", b.hash(), true, 1});
  EXPECT_EQ(request_rationale(client, b, "m9").rationale, "cached");
  EXPECT_EQ(client.upstream_calls(), 0);
}

TEST(Distillation, OneRecordPerSample) {
  Corpus c;
  auto t = std::make_shared<TemplateTeacher>();
  ChatClient client(t, fast_retry(), 2);
  std::ostringstream log;
  const DistillationSet set = build_distillation_set(c.train, c.captions, "stub", client, &log);
  ASSERT_EQ(set.records.size(), 4u);
  EXPECT_EQ(client.cache().size(), 4u);
  EXPECT_EQ(set.summary.valid, 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(set.records[i].meme_id, c.train.samples[i].id);
    EXPECT_TRUE(set.records[i].valid);
  }
  EXPECT_NE(log.str().find("4 valid"), std::string::npos);
}

TEST(Distillation, RerunIssuesNoUpstreamCalls) {
  Corpus c;
  auto t = std::make_shared<TemplateTeacher>();
  ChatClient client(t, fast_retry(), 3);
  const DistillationSet first = build_distillation_set(c.train, c.captions, "stub", client);
  const int calls = client.upstream_calls();
  const DistillationSet second = build_distillation_set(c.train, c.captions, "stub", client);
  EXPECT_EQ(client.upstream_calls(), calls);
  for (std::size_t i = 0; i < first.records.size(); ++i)
    EXPECT_EQ(first.records[i].rationale, second.records[i].rationale);
}

TEST(Distillation, PersistentCacheAcrossClients) {
  TempDir dir;
  Corpus c;
  {
    ChatClient client(std::make_shared<TemplateTeacher>(), fast_retry());
    build_distillation_set(c.train, c.captions, "stub", client);
    client.cache().save(dir / "cache.jsonl");
  }
  auto t = std::make_shared<TemplateTeacher>();
  ChatClient client(t, fast_retry());
  EXPECT_EQ(client.cache().load_from(dir / "cache.jsonl"), 4u);
  build_distillation_set(c.train, c.captions, "stub", client);
  EXPECT_EQ(t->calls(), 0);
}

TEST(Distillation, DeclaringTeacherYieldsInvalidRecords) {
  Corpus c;
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle&, int) {
    return std::string("the label is harmful");
  });
  ChatClient client(t, fast_retry());
  std::ostringstream log;
  const DistillationSet set = build_distillation_set(c.train, c.captions, "stub", client, &log);
  EXPECT_EQ(set.summary.invalid, 4u);
  EXPECT_EQ(set.summary.reprompted, 4u);
  EXPECT_TRUE(set.targets().empty());
  EXPECT_EQ(t->calls(), 8);
  EXPECT_NE(log.str().find("warning"), std::string::npos);
}

TEST(Distillation, RepromptCarriesRejectionReason) {
  Corpus c;
  auto t = std::make_shared<ScriptedTransport>([](const PromptBundle& b, int) {
    if (b.user.find("rejected") != std::string::npos) return std::string("a neutral explanation");
    return std::string("Harmful: it mocks people");
  });
  ChatClient client(t, fast_retry());
  const DistillationSet set = build_distillation_set(c.train, c.captions, "stub", client);
  EXPECT_EQ(set.summary.valid, 4u);
  EXPECT_EQ(set.summary.reprompted, 4u);
  for (const auto& r : set.records) EXPECT_EQ(r.rationale, "a neutral explanation");
}

TEST(Distillation, GuardsTestSplit) {
  Corpus c;
  Dataset test = c.train;
  test.split = Split::test;
  ChatClient client(std::make_shared<TemplateTeacher>(), fast_retry());
  EXPECT_THROW(build_distillation_set(test, c.captions, "stub", client), GuardError);
  EXPECT_EQ(client.upstream_calls(), 0);
}

TEST(Distillation, RequiresLabels) {
  Corpus c;
  c.train.samples[2].label.reset();
  ChatClient client(std::make_shared<TemplateTeacher>(), fast_retry());
  EXPECT_THROW(build_distillation_set(c.train, c.captions, "stub", client), MissingLabelError);
}

TEST(Distillation, MissingCaptionNamesMeme) {
  Corpus c;
  CaptionCache partial;
  for (const auto& s : c.train.samples)
    if (s.id != "m3") partial.put({s.id, *c.captions.find(s.id, "stub"), "stub"});
  ChatClient client(std::make_shared<TemplateTeacher>(), fast_retry());
  try {
    build_distillation_set(c.train, partial, "stub", client);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_NE(std::string(e.what()).find("m3"), std::string::npos);
  }
}

TEST(Distillation, InflightCapRespected) {
  const Dataset train = make_fixture_set(3, 16);
  CaptionCache captions;
  caption_dataset(train, "stub", captions);
  std::atomic<int> active{0}, peak{0};
  auto t = std::make_shared<ScriptedTransport>([&](const PromptBundle&, int) {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --active;
    return std::string("a neutral explanation");
  });
  ChatClient client(t, fast_retry(), 3);
  build_distillation_set(train, captions, "stub", client);
  EXPECT_LE(peak.load(), 3);
  EXPECT_EQ(t->calls(), 16);
}

TEST(Replay, TranscriptReplaysDeterministically) {
  TempDir dir;
  Corpus c;
  ChatClient live(std::make_shared<TemplateTeacher>(), fast_retry(), 4);
  const DistillationSet original = build_distillation_set(c.train, c.captions, "stub", live);
  live.save_transcript(dir / "t.jsonl");
  live.save_transcript(dir / "t2.jsonl");
  std::ifstream a(dir / "t.jsonl"), b(dir / "t2.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());

  for (int run = 0; run < 2; ++run) {
    ChatClient replay(std::make_shared<ReplayTransport>(ReplayTransport::load(dir / "t.jsonl")), fast_retry());
    const DistillationSet again = build_distillation_set(c.train, c.captions, "stub", replay);
    ASSERT_EQ(again.records.size(), original.records.size());
    for (std::size_t i = 0; i < again.records.size(); ++i) {
      EXPECT_EQ(again.records[i].rationale, original.records[i].rationale);
      EXPECT_EQ(again.records[i].prompt_hash, original.records[i].prompt_hash);
    }
  }
}

TEST(Replay, MissIsConfigError) {
  TempDir dir;
  std::ofstream(dir / "empty.jsonl") << "";
  ReplayTransport t = ReplayTransport::load(dir / "empty.jsonl");
  EXPECT_THROW(t.complete(make_bundle("t", "c", Label::harmful)), ConfigError);
}

TEST(Rationales, RoundTrip) {
  TempDir dir;
  const std::vector<RationaleRecord> recs{{"m1", "first \"quoted\"", "h1", true, 1}, {"m2", "second", "h2", false, 2}};
  save_rationales(recs, dir / "r.jsonl");
  const auto back = load_rationales(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].rationale, recs[0].rationale);
  EXPECT_EQ(back[1].valid, false);
  EXPECT_EQ(back[1].attempt, 2);
}

// -- HTTP transport against a local server ------------------------------------

class LocalChatServer {
 public:
  explicit LocalChatServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalChatServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpChatConfig local_config(const std::string& url) {
  ::setenv("MEMEFUSE_TEST_KEY", "sk-test", 1);
  HttpChatConfig c;
  c.base_url = url;
  c.api_key_env = "MEMEFUSE_TEST_KEY";
  c.timeout_seconds = 5;
  return c;
}

TEST(HttpTransport, RequestContractAndResponseParsing) {
  nlohmann::json seen;
  std::string auth;
  LocalChatServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"a reasoned answer"}}]})",
                    "application/json");
  });
  HttpChatTransport t(local_config(server.url()));
  const PromptBundle b = make_bundle("t", "c", Label::harmful);
  EXPECT_EQ(t.complete(b), "a reasoned answer");
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["model"], "gpt-3.5-turbo");
  EXPECT_EQ(seen["temperature"], 0.0);
  EXPECT_EQ(seen["max_tokens"], 256);
  ASSERT_EQ(seen["messages"].size(), 2u);
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][0]["content"], b.system);
  EXPECT_EQ(seen["messages"][1]["role"], "user");
  EXPECT_EQ(seen["messages"][1]["content"], b.user);
}

TEST(HttpTransport, ServerErrorsAreRetryable) {
  std::atomic<int> hits{0};
  LocalChatServer server([&](const httplib::Request&, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"second time"}}]})", "application/json");
  });
  ChatClient client(std::make_shared<HttpChatTransport>(local_config(server.url())), fast_retry(3));
  const RationaleRecord r = request_rationale(client, make_bundle("t", "c", Label::harmless));
  EXPECT_EQ(r.rationale, "second time");
  EXPECT_EQ(r.attempt, 2);
}

TEST(HttpTransport, ClientErrorsAreConfigErrors) {
  LocalChatServer server([](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  HttpChatTransport t(local_config(server.url()));
  EXPECT_THROW(t.complete(make_bundle("t", "c", Label::harmless)), ConfigError);
}

TEST(HttpTransport, UnreachableIsTransportError) {
  HttpChatConfig c = local_config("http://127.0.0.1:1");
  c.timeout_seconds = 1;
  HttpChatTransport t(c);
  EXPECT_THROW(t.complete(make_bundle("t", "c", Label::harmless)), TransportError);
}

TEST(HttpTransport, MissingCredential) {
  HttpChatConfig c;
  c.api_key_env = "MEMEFUSE_DEFINITELY_UNSET_KEY";
  ::unsetenv(c.api_key_env.c_str());
  EXPECT_THROW(HttpChatTransport{c}, ConfigError);
}

}  // namespace
}  // namespace memefuse
