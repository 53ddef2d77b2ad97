#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prlm/errors.hpp"
#include "prlm/rng.hpp"

namespace prlm::corpus {

using json = nlohmann::json;

struct ProfileItem {
  std::string id;
  std::string text;
  std::int64_t timestamp = 0;
  std::map<std::string, std::string> meta;  // unknown keys preserved verbatim

  bool operator==(const ProfileItem&) const = default;
};

struct UserRecord {
  std::string user_id;
  std::vector<ProfileItem> profile;  // the per-user corpus D

  bool operator==(const UserRecord&) const = default;
};

enum class Split { train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> split_from_name(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  return std::nullopt;
}

struct Example {
  std::string example_id;
  std::string user_id;
  std::string query;      // x
  std::string reference;  // annotated gold output
  std::int64_t timestamp = 0;
  Split split = Split::train;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::map<std::string, UserRecord> users;
  std::vector<Example> examples;  // ordered by (timestamp, example_id)
  std::map<Split, std::size_t> split_counts;

  bool operator==(const Dataset&) const = default;

  std::vector<const Example*> split_examples(Split s) const {
    std::vector<const Example*> out;
    for (const auto& e : examples) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }
};

enum class Format { lamp_json, jsonl };

namespace detail {

inline void sort_examples(std::vector<Example>& examples) {
  std::sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.example_id < b.example_id;
  });
}

inline void recount_splits(Dataset& ds) {
  ds.split_counts = {{Split::train, 0}, {Split::dev, 0}, {Split::test, 0}};
  for (const auto& e : ds.examples) ++ds.split_counts[e.split];
}

inline std::string require_string(const json& obj, const char* field, const std::string& where) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) throw SchemaError(where + " needs string field '" + field + "'");
  return it->get<std::string>();
}

inline std::int64_t require_int(const json& obj, const char* field, const std::string& where) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_number_integer()) {
    throw SchemaError(where + " needs integer field '" + field + "'");
  }
  return it->get<std::int64_t>();
}

inline ProfileItem parse_profile_item(const json& obj, const std::string& where) {
  ProfileItem item;
  item.id = require_string(obj, "id", where);
  item.text = require_string(obj, "text", where);
  item.timestamp = require_int(obj, "timestamp", where);
  if (item.text.empty()) throw SchemaError(where + " has empty 'text'");
  if (item.timestamp < 0) throw SchemaError(where + " has negative 'timestamp'");
  if (const auto it = obj.find("meta"); it != obj.end()) {
    if (!it->is_object()) throw SchemaError(where + " field 'meta' must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw SchemaError(where + " meta value for '" + k + "' must be a string");
      item.meta[k] = v.get<std::string>();
    }
  }
  return item;
}

inline UserRecord parse_user(const json& obj, const std::string& where) {
  UserRecord user;
  user.user_id = require_string(obj, "user_id", where);
  const auto it = obj.find("profile");
  if (it == obj.end() || !it->is_array()) throw SchemaError(where + " needs array field 'profile'");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < it->size(); ++i) {
    auto item = parse_profile_item((*it)[i], where + ".profile[" + std::to_string(i) + "]");
    if (!seen.insert(item.id).second) {
      throw SchemaError(where + " has duplicate profile item id '" + item.id + "'");
    }
    user.profile.push_back(std::move(item));
  }
  return user;
}

inline Example parse_example(const json& obj, const std::string& where) {
  Example e;
  e.example_id = require_string(obj, "example_id", where);
  e.user_id = require_string(obj, "user_id", where);
  e.query = require_string(obj, "query", where);
  e.reference = require_string(obj, "reference", where);
  e.timestamp = require_int(obj, "timestamp", where);
  const std::string split = require_string(obj, "split", where);
  const auto parsed = split_from_name(split);
  if (!parsed) throw SchemaError(where + " has unknown split '" + split + "'");
  e.split = *parsed;
  if (e.query.empty()) throw SchemaError(where + " has empty 'query'");
  if (e.reference.empty()) throw SchemaError(where + " has empty 'reference'");
  return e;
}

inline json profile_item_to_json(const ProfileItem& item) {
  json obj = {{"id", item.id}, {"text", item.text}, {"timestamp", item.timestamp}};
  if (!item.meta.empty()) obj["meta"] = item.meta;
  return obj;
}

inline json user_to_json(const UserRecord& user) {
  json profile = json::array();
  for (const auto& item : user.profile) profile.push_back(profile_item_to_json(item));
  return json{{"user_id", user.user_id}, {"profile", std::move(profile)}};
}

inline json example_to_json(const Example& e) {
  return json{{"example_id", e.example_id}, {"user_id", e.user_id},     {"query", e.query},
              {"reference", e.reference},   {"timestamp", e.timestamp}, {"split", split_name(e.split)}};
}

inline std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void finalize(Dataset& ds) {
  std::set<std::string> ids;
  for (const auto& e : ds.examples) {
    if (!ids.insert(e.example_id).second) {
      throw SchemaError("duplicate example_id '" + e.example_id + "'");
    }
    if (ds.users.find(e.user_id) == ds.users.end()) throw DanglingUser(e.example_id, e.user_id);
  }
  sort_examples(ds.examples);
  recount_splits(ds);
}

inline std::filesystem::path users_sidecar(const std::filesystem::path& examples_path) {
  return examples_path.parent_path() / "users.jsonl";
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& path, Format format) {
  Dataset ds;
  if (format == Format::lamp_json) {
    const std::string text = detail::read_file(path);
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(detail::line_of_byte(text, e.byte), e.what());
    }
    if (!doc.is_object() || !doc.contains("users") || !doc["users"].is_array()) {
      throw SchemaError("document needs array field 'users'");
    }
    if (!doc.contains("examples") || !doc["examples"].is_array()) {
      throw SchemaError("document needs array field 'examples'");
    }
    for (std::size_t i = 0; i < doc["users"].size(); ++i) {
      auto user = detail::parse_user(doc["users"][i], "users[" + std::to_string(i) + "]");
      if (ds.users.count(user.user_id)) {
        throw SchemaError("duplicate user_id '" + user.user_id + "'");
      }
      ds.users.emplace(user.user_id, std::move(user));
    }
    for (std::size_t i = 0; i < doc["examples"].size(); ++i) {
      ds.examples.push_back(
          detail::parse_example(doc["examples"][i], "examples[" + std::to_string(i) + "]"));
    }
  } else {
    const auto parse_lines = [](const std::filesystem::path& file, auto&& handle) {
      std::ifstream in(file, std::ios::binary);
      if (!in) throw ConfigError("cannot open file: " + file.string());
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
          obj = json::parse(line);
        } catch (const json::parse_error& e) {
          throw ParseError(line_no, e.what());
        }
        handle(obj, line_no);
      }
    };
    parse_lines(detail::users_sidecar(path), [&](const json& obj, std::size_t line_no) {
      auto user = detail::parse_user(obj, "users.jsonl line " + std::to_string(line_no));
      if (ds.users.count(user.user_id)) {
        throw SchemaError("duplicate user_id '" + user.user_id + "'");
      }
      ds.users.emplace(user.user_id, std::move(user));
    });
    parse_lines(path, [&](const json& obj, std::size_t line_no) {
      ds.examples.push_back(detail::parse_example(obj, "line " + std::to_string(line_no)));
    });
  }
  detail::finalize(ds);
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path, Format format) {
  if (format == Format::lamp_json) {
    json users = json::array();
    for (const auto& [id, user] : ds.users) users.push_back(detail::user_to_json(user));
    json examples = json::array();
    for (const auto& e : ds.examples) examples.push_back(detail::example_to_json(e));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path.string());
    out << json{{"users", std::move(users)}, {"examples", std::move(examples)}}.dump(2) << "\n";
  } else {
    std::ofstream users_out(detail::users_sidecar(path), std::ios::binary);
    if (!users_out) throw ConfigError("cannot write users sidecar next to: " + path.string());
    for (const auto& [id, user] : ds.users) users_out << detail::user_to_json(user).dump() << "\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path.string());
    for (const auto& e : ds.examples) out << detail::example_to_json(e).dump() << "\n";
  }
}

// Reassigns splits by timestamp: train < b1, dev in [b1, b2), test >= b2.
// Empty splits are reported as warnings, not errors.
inline Dataset temporal_split(const Dataset& ds, std::int64_t b1, std::int64_t b2,
                              std::vector<std::string>* warnings = nullptr) {
  if (b1 >= b2) throw ConfigError("split boundaries must be strictly increasing");
  Dataset out = ds;
  for (auto& e : out.examples) {
    e.split = e.timestamp < b1 ? Split::train : (e.timestamp < b2 ? Split::dev : Split::test);
  }
  detail::sort_examples(out.examples);
  detail::recount_splits(out);
  if (warnings) {
    for (const Split s : {Split::train, Split::dev, Split::test}) {
      if (out.split_counts.at(s) == 0) {
        warnings->push_back(std::string("EmptySplit: ") + split_name(s) + " split is empty");
      }
    }
  }
  return out;
}

// Items of the example's user visible at generation time: strictly earlier
// than the example, ordered by (timestamp, id).
inline std::vector<ProfileItem> visible_profile(const Dataset& ds, const Example& e) {
  const auto it = ds.users.find(e.user_id);
  if (it == ds.users.end()) throw DanglingUser(e.example_id, e.user_id);
  std::vector<ProfileItem> out;
  for (const auto& item : it->second.profile) {
    if (item.timestamp < e.timestamp) out.push_back(item);
  }
  std::sort(out.begin(), out.end(), [](const ProfileItem& a, const ProfileItem& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.id < b.id;
  });
  return out;
}

// The hidden style token of a synthetic user, if the dataset carries one.
inline std::optional<std::string> user_style(const UserRecord& user) {
  for (const auto& item : user.profile) {
    const auto it = item.meta.find("user_style");
    if (it != item.meta.end()) return it->second;
  }
  return std::nullopt;
}

struct SynthOptions {
  int items_per_user = 12;
  int train_per_user = 6;
  int dev_per_user = 2;
  int test_per_user = 2;
  std::vector<std::string> topics = {"rivers",  "engines", "gardens", "markets",
                                     "comets",  "violins", "harbors", "lanterns"};
};

// Synthetic personalization task with a measurable ground truth: each user is
// assigned a hidden style token; every on-style profile item and every
// reference contains it; a `noise` fraction of profile items are distractors
// written in another user's style. Deterministic for a fixed seed.
inline Dataset synth_dataset(std::uint64_t seed, int n_users,
                             const std::vector<std::string>& style_vocab, double noise,
                             const SynthOptions& opts = {}) {
  if (n_users < 1) throw ConfigError("synth_dataset needs n_users >= 1");
  if (style_vocab.empty()) throw ConfigError("synth_dataset needs a non-empty style vocabulary");
  if (noise < 0.0 || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");

  Rng rng(derive_seed(seed, "corpus.synth"));
  Dataset ds;

  const auto pad = [](int v) {
    std::string s = std::to_string(v);
    while (s.size() < 3) s.insert(s.begin(), '0');
    return s;
  };
  const std::vector<std::string> item_templates = {
      "note the {style} take on {topic}",
      "a {style} piece about {topic}",
      "my {style} line on {topic}",
  };
  const auto fill = [](std::string tpl, const std::string& style, const std::string& topic) {
    const auto sub = [&tpl](const std::string& key, const std::string& value) {
      const auto pos = tpl.find(key);
      if (pos != std::string::npos) tpl.replace(pos, key.size(), value);
    };
    sub("{style}", style);
    sub("{topic}", topic);
    return tpl;
  };

  for (int u = 0; u < n_users; ++u) {
    UserRecord user;
    user.user_id = "u" + pad(u);
    const std::string& style = style_vocab[static_cast<std::size_t>(u) % style_vocab.size()];

    for (int i = 0; i < opts.items_per_user; ++i) {
      ProfileItem item;
      item.id = user.user_id + "-p" + pad(i);
      item.timestamp = 1000 + 10 * i;
      item.meta["user_style"] = style;
      const std::string& topic = rng.pick(opts.topics);
      const std::string& tpl = rng.pick(item_templates);
      const bool distractor = rng.bernoulli(noise) && style_vocab.size() > 1;
      if (distractor) {
        std::string other = style;
        while (other == style) other = rng.pick(style_vocab);
        item.text = fill(tpl, other, topic);
        item.meta["distractor"] = "1";
      } else {
        item.text = fill(tpl, style, topic);
      }
      user.profile.push_back(std::move(item));
    }

    const int total = opts.train_per_user + opts.dev_per_user + opts.test_per_user;
    for (int j = 0; j < total; ++j) {
      Example e;
      e.example_id = user.user_id + "-e" + pad(j);
      e.user_id = user.user_id;
      const std::string& topic = rng.pick(opts.topics);
      e.query = "write a line about " + topic;
      e.reference = "the " + style + " take on " + topic;
      if (j < opts.train_per_user) {
        e.split = Split::train;
        e.timestamp = 10000 + j;
      } else if (j < opts.train_per_user + opts.dev_per_user) {
        e.split = Split::dev;
        e.timestamp = 20000 + j;
      } else {
        e.split = Split::test;
        e.timestamp = 30000 + j;
      }
      ds.examples.push_back(std::move(e));
    }
    ds.users.emplace(user.user_id, std::move(user));
  }

  detail::finalize(ds);
  return ds;
}

}  // namespace prlm::corpus
