#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prlm/corpus.hpp"

using namespace prlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("prlm_corpus_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const char* kLampFixture = R"({
  "users": [
    {"user_id": "u1",
     "profile": [
       {"id": "p1", "text": "early note", "timestamp": 100, "meta": {"lang": "en"}},
       {"id": "p2", "text": "late note", "timestamp": 300}
     ]},
    {"user_id": "u2", "profile": []}
  ],
  "examples": [
    {"example_id": "e2", "user_id": "u1", "query": "later question",
     "reference": "later answer", "timestamp": 400, "split": "test"},
    {"example_id": "e1", "user_id": "u1", "query": "first question",
     "reference": "first answer", "timestamp": 200, "split": "train"},
    {"example_id": "e3", "user_id": "u2", "query": "other question",
     "reference": "other answer", "timestamp": 200, "split": "dev"}
  ]
})";

}  // namespace

TEST_CASE("lamp-style json loads users, examples, and metadata") {
  const auto dir = temp_dir("lamp");
  write_file(dir / "data.json", kLampFixture);
  const auto ds = corpus::load_dataset(dir / "data.json", corpus::Format::lamp_json);

  REQUIRE(ds.users.size() == 2);
  const auto& u1 = ds.users.at("u1");
  REQUIRE(u1.profile.size() == 2);
  CHECK(u1.profile[0].text == "early note");
  CHECK(u1.profile[0].meta.at("lang") == "en");
  CHECK(u1.profile[1].meta.empty());
  CHECK(ds.users.at("u2").profile.empty());

  // Examples come back sorted by (timestamp, example_id) regardless of file order.
  REQUIRE(ds.examples.size() == 3);
  CHECK(ds.examples[0].example_id == "e1");
  CHECK(ds.examples[1].example_id == "e3");
  CHECK(ds.examples[2].example_id == "e2");

  CHECK(ds.split_counts.at(corpus::Split::train) == 1);
  CHECK(ds.split_counts.at(corpus::Split::dev) == 1);
  CHECK(ds.split_counts.at(corpus::Split::test) == 1);

  const auto test_split = ds.split_examples(corpus::Split::test);
  REQUIRE(test_split.size() == 1);
  CHECK(test_split[0]->example_id == "e2");
}

TEST_CASE("json parse failures report the offending line") {
  const auto dir = temp_dir("badjson");
  write_file(dir / "data.json", "{\n  \"users\": [],\n  \"examples\": [}\n}\n");
  try {
    corpus::load_dataset(dir / "data.json", corpus::Format::lamp_json);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("jsonl parse failures report the offending line") {
  const auto dir = temp_dir("badjsonl");
  write_file(dir / "users.jsonl", "{\"user_id\": \"u1\", \"profile\": []}\n");
  write_file(dir / "examples.jsonl",
             "{\"example_id\": \"e1\", \"user_id\": \"u1\", \"query\": \"q\", "
             "\"reference\": \"r\", \"timestamp\": 1, \"split\": \"train\"}\n"
             "\n"
             "{not json at all\n");
  try {
    corpus::load_dataset(dir / "examples.jsonl", corpus::Format::jsonl);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
  }
}

TEST_CASE("schema violations are rejected with context") {
  const auto dir = temp_dir("schema");
  const auto load = [&](const std::string& body) {
    write_file(dir / "data.json", body);
    return corpus::load_dataset(dir / "data.json", corpus::Format::lamp_json);
  };

  SECTION("missing top-level arrays") {
    CHECK_THROWS_AS(load("{\"examples\": []}"), SchemaError);
    CHECK_THROWS_AS(load("{\"users\": []}"), SchemaError);
  }
  SECTION("example with empty query") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[]}],
                 "examples":[{"example_id":"e1","user_id":"u1","query":"",
                              "reference":"r","timestamp":1,"split":"train"}]})"),
        SchemaError);
  }
  SECTION("example with unknown split name") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[]}],
                 "examples":[{"example_id":"e1","user_id":"u1","query":"q",
                              "reference":"r","timestamp":1,"split":"validation"}]})"),
        SchemaError);
  }
  SECTION("example referencing a missing user") {
    CHECK_THROWS_AS(
        load(R"({"users":[],
                 "examples":[{"example_id":"e1","user_id":"ghost","query":"q",
                              "reference":"r","timestamp":1,"split":"train"}]})"),
        DanglingUser);
  }
  SECTION("duplicate example ids") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[]}],
                 "examples":[{"example_id":"e1","user_id":"u1","query":"q",
                              "reference":"r","timestamp":1,"split":"train"},
                             {"example_id":"e1","user_id":"u1","query":"q2",
                              "reference":"r2","timestamp":2,"split":"train"}]})"),
        SchemaError);
  }
  SECTION("duplicate profile item ids") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[
                   {"id":"p1","text":"a","timestamp":1},
                   {"id":"p1","text":"b","timestamp":2}]}],
                 "examples":[]})"),
        SchemaError);
  }
  SECTION("negative profile timestamp") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[
                   {"id":"p1","text":"a","timestamp":-5}]}],
                 "examples":[]})"),
        SchemaError);
  }
  SECTION("non-string meta value") {
    CHECK_THROWS_AS(
        load(R"({"users":[{"user_id":"u1","profile":[
                   {"id":"p1","text":"a","timestamp":1,"meta":{"n":7}}]}],
                 "examples":[]})"),
        SchemaError);
  }
}

TEST_CASE("jsonl round trip preserves the dataset and is byte stable") {
  const auto ds = corpus::synth_dataset(7, 4, {"azure", "crimson"}, 0.25);
  const auto dir = temp_dir("roundtrip");

  corpus::write_dataset(ds, dir / "data.jsonl", corpus::Format::jsonl);
  const auto loaded = corpus::load_dataset(dir / "data.jsonl", corpus::Format::jsonl);
  CHECK(loaded == ds);

  const auto first_examples = read_file(dir / "data.jsonl");
  const auto first_users = read_file(dir / "users.jsonl");
  corpus::write_dataset(loaded, dir / "data.jsonl", corpus::Format::jsonl);
  CHECK(read_file(dir / "data.jsonl") == first_examples);
  CHECK(read_file(dir / "users.jsonl") == first_users);
}

TEST_CASE("lamp json round trip preserves the dataset") {
  const auto ds = corpus::synth_dataset(11, 3, {"emerald"}, 0.0);
  const auto dir = temp_dir("roundtrip_json");
  corpus::write_dataset(ds, dir / "data.json", corpus::Format::lamp_json);
  CHECK(corpus::load_dataset(dir / "data.json", corpus::Format::lamp_json) == ds);
}

TEST_CASE("temporal split reassigns by timestamp and warns on empty splits") {
  const auto ds = corpus::synth_dataset(3, 3, {"azure"}, 0.0);

  SECTION("boundaries inside the example range") {
    std::vector<std::string> warnings;
    const auto out = corpus::temporal_split(ds, 20000, 30000, &warnings);
    CHECK(warnings.empty());
    for (const auto& e : out.examples) {
      if (e.timestamp < 20000) CHECK(e.split == corpus::Split::train);
      else if (e.timestamp < 30000) CHECK(e.split == corpus::Split::dev);
      else CHECK(e.split == corpus::Split::test);
    }
    CHECK(out.split_counts.at(corpus::Split::train) == 18);
    CHECK(out.split_counts.at(corpus::Split::dev) == 6);
    CHECK(out.split_counts.at(corpus::Split::test) == 6);
  }
  SECTION("boundaries past the data leave later splits empty, with warnings") {
    std::vector<std::string> warnings;
    const auto out = corpus::temporal_split(ds, 90000, 90001, &warnings);
    CHECK(out.split_counts.at(corpus::Split::train) == out.examples.size());
    REQUIRE(warnings.size() == 2);
    CHECK(warnings[0].find("dev") != std::string::npos);
    CHECK(warnings[1].find("test") != std::string::npos);
  }
  SECTION("non-increasing boundaries are rejected") {
    CHECK_THROWS_AS(corpus::temporal_split(ds, 5, 5), ConfigError);
  }
}

TEST_CASE("visible profile keeps strictly earlier items sorted by time then id") {
  corpus::Dataset ds;
  corpus::UserRecord user;
  user.user_id = "u1";
  user.profile = {
      {"pz", "tied late", 200, {}},
      {"pa", "tied early", 200, {}},
      {"pb", "oldest", 50, {}},
      {"pc", "same instant as example", 400, {}},
      {"pd", "future", 900, {}},
  };
  ds.users.emplace("u1", user);
  corpus::Example e;
  e.example_id = "e1";
  e.user_id = "u1";
  e.query = "q";
  e.reference = "r";
  e.timestamp = 400;

  const auto visible = corpus::visible_profile(ds, e);
  REQUIRE(visible.size() == 3);
  CHECK(visible[0].id == "pb");
  CHECK(visible[1].id == "pa");
  CHECK(visible[2].id == "pz");

  corpus::Example early = e;
  early.timestamp = 10;
  CHECK(corpus::visible_profile(ds, early).empty());

  corpus::Example ghost = e;
  ghost.user_id = "nobody";
  CHECK_THROWS_AS(corpus::visible_profile(ds, ghost), DanglingUser);
}

TEST_CASE("synthetic dataset is deterministic per seed") {
  const auto a = corpus::synth_dataset(42, 6, {"azure", "crimson", "emerald"}, 0.3);
  const auto b = corpus::synth_dataset(42, 6, {"azure", "crimson", "emerald"}, 0.3);
  const auto c = corpus::synth_dataset(43, 6, {"azure", "crimson", "emerald"}, 0.3);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("synthetic dataset carries a measurable style ground truth") {
  const std::vector<std::string> styles = {"azure", "crimson"};
  const auto ds = corpus::synth_dataset(5, 4, styles, 0.0);

  CHECK(ds.users.size() == 4);
  CHECK(ds.examples.size() == 4 * 10);
  CHECK(ds.split_counts.at(corpus::Split::train) == 4 * 6);
  CHECK(ds.split_counts.at(corpus::Split::dev) == 4 * 2);
  CHECK(ds.split_counts.at(corpus::Split::test) == 4 * 2);

  for (const auto& [uid, user] : ds.users) {
    const auto style = corpus::user_style(user);
    REQUIRE(style.has_value());
    // Styles round-robin over users; every reference and clean profile item
    // contains the user's style token.
    for (const auto& item : user.profile) {
      CHECK(item.meta.at("user_style") == *style);
      if (!item.meta.count("distractor")) {
        CHECK(item.text.find(*style) != std::string::npos);
      }
    }
  }
  for (const auto& e : ds.examples) {
    const auto style = corpus::user_style(ds.users.at(e.user_id));
    REQUIRE(style.has_value());
    CHECK(e.reference.find(*style) != std::string::npos);
    CHECK(e.query.rfind("write a line about ", 0) == 0);
  }
}

TEST_CASE("synthetic noise produces marked distractors in another style") {
  const std::vector<std::string> styles = {"azure", "crimson"};
  const auto ds = corpus::synth_dataset(9, 2, styles, 1.0);
  std::size_t distractors = 0;
  for (const auto& [uid, user] : ds.users) {
    const auto style = corpus::user_style(user);
    for (const auto& item : user.profile) {
      if (item.meta.count("distractor")) {
        ++distractors;
        CHECK(item.text.find(*style) == std::string::npos);
      }
    }
  }
  // noise=1 marks every item as a distractor when another style exists.
  CHECK(distractors == 2 * 12);
}

TEST_CASE("synthetic dataset validates its arguments") {
  CHECK_THROWS_AS(corpus::synth_dataset(1, 0, {"azure"}, 0.0), ConfigError);
  CHECK_THROWS_AS(corpus::synth_dataset(1, 2, {}, 0.0), ConfigError);
  CHECK_THROWS_AS(corpus::synth_dataset(1, 2, {"azure"}, 1.5), ConfigError);
}

TEST_CASE("split name round trip") {
  using corpus::Split;
  for (const Split s : {Split::train, Split::dev, Split::test}) {
    const auto parsed = corpus::split_from_name(corpus::split_name(s));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == s);
  }
  CHECK_FALSE(corpus::split_from_name("eval").has_value());
}
