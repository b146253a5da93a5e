#include "olens/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "olens/error.hpp"

namespace olens {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::FT: return "FT";
    case Stage::PT: return "PT";
    case Stage::PT_R: return "PT-R";
    case Stage::PT_C: return "PT-C";
    case Stage::PT_R_C: return "PT-R-C";
    case Stage::PT_C_C: return "PT-C-C";
    case Stage::E: return "E";
  }
  return "FT";
}

Stage stage_from_string(const std::string& s) {
  if (s == "FT") return Stage::FT;
  if (s == "PT") return Stage::PT;
  if (s == "PT-R") return Stage::PT_R;
  if (s == "PT-C") return Stage::PT_C;
  if (s == "PT-R-C") return Stage::PT_R_C;
  if (s == "PT-C-C") return Stage::PT_C_C;
  if (s == "E") return Stage::E;
  raise(ErrorKind::Value, "unknown stage '" + s + "'");
}

std::pair<long long, long long> slice_counts(long long n, double dev_fraction) {
  if (dev_fraction < 0.0 || dev_fraction > 1.0)
    raise(ErrorKind::Value, "slice_counts: fraction outside [0,1]");
  auto dev = static_cast<long long>(std::floor(dev_fraction * static_cast<double>(n)));
  return {n - dev, dev};
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_unit_interval(const std::string& s, const std::string& what, int line_no) {
  double v = 0;
  try {
    v = std::stod(s);
  } catch (const std::exception&) {
    raise(ErrorKind::Parse, what + ": not a number at line " + std::to_string(line_no));
  }
  if (v < 0.0 || v > 1.0)
    raise(ErrorKind::Value,
          what + ": value " + s + " outside [0,1] at line " + std::to_string(line_no));
  return v;
}

}  // namespace

std::vector<RawTweet> load_olid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "load_olid: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || strip_cr(line) != "id\ttweet\tsubtask_a")
    raise(ErrorKind::Parse, path + ": expected header 'id<TAB>tweet<TAB>subtask_a'");
  std::vector<RawTweet> out;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      raise(ErrorKind::Parse, path + ": expected 3 tab-separated fields at line " +
                                  std::to_string(line_no) + ", got " +
                                  std::to_string(fields.size()));
    RawTweet t;
    t.id = fields[0];
    t.text = fields[1];
    if (fields[2] == "NOT")
      t.gold_label = kNot;
    else if (fields[2] == "OFF")
      t.gold_label = kOff;
    else
      raise(ErrorKind::Value, path + ": unknown label '" + fields[2] + "' at line " +
                                  std::to_string(line_no));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RawTweet> load_solid(const std::string& text_path, const std::string& labels_path) {
  std::ifstream tf(text_path, std::ios::binary);
  if (!tf) raise(ErrorKind::Io, "load_solid: cannot open " + text_path);
  std::ifstream lf(labels_path, std::ios::binary);
  if (!lf) raise(ErrorKind::Io, "load_solid: cannot open " + labels_path);

  std::string line;
  if (!std::getline(tf, line) || strip_cr(line) != "id\ttext")
    raise(ErrorKind::Parse, text_path + ": expected header 'id<TAB>text'");
  if (!std::getline(lf, line) || strip_cr(line) != "id\taverage\tstd")
    raise(ErrorKind::Parse, labels_path + ": expected header 'id<TAB>average<TAB>std'");

  std::vector<RawTweet> out;
  std::unordered_map<std::string, std::size_t> index;
  int line_no = 1;
  while (std::getline(tf, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2)
      raise(ErrorKind::Parse, text_path + ": expected 2 tab-separated fields at line " +
                                  std::to_string(line_no));
    if (index.count(fields[0]))
      raise(ErrorKind::Value, text_path + ": duplicate id '" + fields[0] + "' at line " +
                                  std::to_string(line_no));
    index.emplace(fields[0], out.size());
    out.push_back({fields[0], fields[1], std::nullopt, std::nullopt, std::nullopt});
  }

  std::unordered_set<std::string> labeled;
  line_no = 1;
  while (std::getline(lf, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      raise(ErrorKind::Parse, labels_path + ": expected 3 tab-separated fields at line " +
                                  std::to_string(line_no));
    auto it = index.find(fields[0]);
    if (it == index.end())
      raise(ErrorKind::Value,
            "load_solid: id '" + fields[0] + "' has labels but no text row");
    RawTweet& t = out[it->second];
    t.avg_conf = parse_unit_interval(fields[1], labels_path, line_no);
    double sd = 0;
    try {
      sd = std::stod(fields[2]);
    } catch (const std::exception&) {
      raise(ErrorKind::Parse, labels_path + ": not a number at line " + std::to_string(line_no));
    }
    if (sd < 0.0)
      raise(ErrorKind::Value, labels_path + ": negative std at line " + std::to_string(line_no));
    t.conf_std = sd;
    labeled.insert(fields[0]);
  }
  for (const auto& t : out)
    if (!labeled.count(t.id))
      raise(ErrorKind::Value, "load_solid: id '" + t.id + "' has text but no label row");
  return out;
}

std::pair<std::vector<RawTweet>, long long> dedup(const std::vector<RawTweet>& tweets) {
  std::vector<RawTweet> kept;
  kept.reserve(tweets.size());
  std::unordered_set<std::string> seen;
  long long removed = 0;
  for (const auto& t : tweets) {
    if (seen.insert(trimmed(t.text)).second)
      kept.push_back(t);
    else
      ++removed;
  }
  return {std::move(kept), removed};
}

int threshold_label(const RawTweet& tweet, double threshold) {
  if (!tweet.avg_conf)
    raise(ErrorKind::Contract, "threshold_label: tweet '" + tweet.id + "' has no avg_conf");
  return *tweet.avg_conf > threshold ? kOff : kNot;
}

namespace {

std::vector<const RawTweet*> shuffled(const std::vector<RawTweet>& rows, RngStream rng) {
  auto idx = shuffled_indices(rows.size(), rng);
  std::vector<const RawTweet*> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = &rows[idx[i]];
  return out;
}

LabeledExample as_class(const std::string& source, const RawTweet& t, double threshold) {
  double target =
      t.gold_label ? static_cast<double>(*t.gold_label)
                   : static_cast<double>(threshold_label(t, threshold));
  return {source + ":" + t.id, t.text, TargetKind::Class, target};
}

LabeledExample as_confidence(const std::string& source, const RawTweet& t) {
  if (!t.avg_conf)
    raise(ErrorKind::Contract, "make_split: tweet '" + t.id + "' has no avg_conf");
  return {source + ":" + t.id, t.text, TargetKind::Confidence, *t.avg_conf};
}

LabeledExample as_text(const std::string& source, const RawTweet& t) {
  return {source + ":" + t.id, t.text, TargetKind::None, 0.0};
}

void require_rows(const std::vector<RawTweet>& rows, const char* name) {
  if (rows.empty()) raise(ErrorKind::Value, std::string("make_split: empty source ") + name);
}

}  // namespace

SplitResult make_split(const SplitPlan& plan, const std::vector<RawTweet>& olid_train,
                       const std::vector<RawTweet>& olid_test,
                       const std::vector<RawTweet>& solid,
                       const std::vector<RawTweet>& task_test) {
  if (plan.olid_dev_fraction < 0.0 || plan.olid_dev_fraction > 1.0 ||
      plan.solid_dev_fraction < 0.0 || plan.solid_dev_fraction > 1.0)
    raise(ErrorKind::Value, "make_split: fraction outside [0,1]");

  SplitResult r;
  RngStream root(plan.seed);

  // All stages slice these two sources identically: one canonical shuffle per
  // source, dev-fraction floor rule. FT's SOLID portion is therefore exactly
  // the PT-R/PT-C train rows, matching the published totals.
  auto olid_sh = shuffled(olid_train, root.fork("split:olid"));
  auto [olid_n_train, olid_n_dev] =
      slice_counts(static_cast<long long>(olid_sh.size()), plan.olid_dev_fraction);
  auto solid_sh = shuffled(solid, root.fork("split:solid"));
  auto [solid_n_train, solid_n_dev] =
      slice_counts(static_cast<long long>(solid_sh.size()), plan.solid_dev_fraction);

  auto push_olid_train_90 = [&](bool as_dev_too) {
    require_rows(olid_train, "olid_train");
    for (long long i = 0; i < olid_n_train; ++i)
      r.train.push_back(as_class("olid", *olid_sh[static_cast<std::size_t>(i)], plan.threshold));
    r.counts["train.olid"] = olid_n_train;
    if (as_dev_too) {
      require_rows(olid_test, "olid_test");
      for (long long i = olid_n_train; i < olid_n_train + olid_n_dev; ++i)
        r.dev.push_back(as_class("olid", *olid_sh[static_cast<std::size_t>(i)], plan.threshold));
      for (const auto& t : olid_test) r.dev.push_back(as_class("olidtest", t, plan.threshold));
      r.counts["dev.olid"] = olid_n_dev;
      r.counts["dev.olidtest"] = static_cast<long long>(olid_test.size());
    }
  };

  switch (plan.stage) {
    case Stage::FT: {
      require_rows(solid, "solid");
      push_olid_train_90(true);
      for (long long i = 0; i < solid_n_train; ++i)
        r.train.push_back(
            as_class("solid", *solid_sh[static_cast<std::size_t>(i)], plan.threshold));
      r.counts["train.solid"] = solid_n_train;
      break;
    }
    case Stage::PT: {
      require_rows(olid_train, "olid_train");
      require_rows(olid_test, "olid_test");
      require_rows(solid, "solid");
      require_rows(task_test, "task_test");
      for (const auto& t : olid_train) r.train.push_back(as_text("olid", t));
      for (const auto& t : olid_test) r.train.push_back(as_text("olidtest", t));
      for (const auto& t : solid) r.train.push_back(as_text("solid", t));
      for (const auto& t : task_test) r.train.push_back(as_text("task", t));
      r.counts["train.olid"] = static_cast<long long>(olid_train.size());
      r.counts["train.olidtest"] = static_cast<long long>(olid_test.size());
      r.counts["train.solid"] = static_cast<long long>(solid.size());
      r.counts["train.task"] = static_cast<long long>(task_test.size());
      break;
    }
    case Stage::PT_R:
    case Stage::PT_C: {
      require_rows(solid, "solid");
      const bool regression = plan.stage == Stage::PT_R;
      for (long long i = 0; i < solid_n_train; ++i) {
        const RawTweet& t = *solid_sh[static_cast<std::size_t>(i)];
        r.train.push_back(regression ? as_confidence("solid", t)
                                     : as_class("solid", t, plan.threshold));
      }
      for (long long i = solid_n_train; i < solid_n_train + solid_n_dev; ++i) {
        const RawTweet& t = *solid_sh[static_cast<std::size_t>(i)];
        r.dev.push_back(regression ? as_confidence("solid", t)
                                   : as_class("solid", t, plan.threshold));
      }
      r.counts["train.solid"] = solid_n_train;
      r.counts["dev.solid"] = solid_n_dev;
      break;
    }
    case Stage::PT_R_C:
    case Stage::PT_C_C:
    case Stage::E: {
      push_olid_train_90(true);
      break;
    }
  }
  r.counts["train.total"] = static_cast<long long>(r.train.size());
  r.counts["dev.total"] = static_cast<long long>(r.dev.size());
  return r;
}

void write_split_manifest(const std::string& path, const SplitResult& result) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "write_split_manifest: cannot open " + path);
  auto emit = [&](const std::vector<LabeledExample>& rows, const char* split) {
    for (const auto& e : rows) {
      f << e.id << '\t' << split << '\t';
      switch (e.kind) {
        case TargetKind::None: f << '-'; break;
        case TargetKind::Class: f << label_name(static_cast<int>(e.target)); break;
        case TargetKind::Confidence: {
          std::ostringstream os;
          os.precision(17);
          os << e.target;
          f << os.str();
          break;
        }
      }
      f << '\n';
    }
  };
  emit(result.train, "train");
  emit(result.dev, "dev");
  if (!f) raise(ErrorKind::Io, "write_split_manifest: write failed for " + path);
}

}  // namespace olens
