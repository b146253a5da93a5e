#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_set>

#include "olens/data.hpp"
#include "olens/error.hpp"

using namespace olens;

namespace {

void write(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  f << body;
}

std::set<std::string> ids_of(const std::vector<LabeledExample>& rows) {
  std::set<std::string> out;
  for (const auto& e : rows) out.insert(e.id);
  return out;
}

}  // namespace

TEST_CASE("load_olid") {
  const std::string path = "/tmp/olens_olid.tsv";

  SUBCASE("parses rows and labels") {
    write(path,
          "id\ttweet\tsubtask_a\n"
          "09\t@USER Buy more icecream!!!\tNOT\n"
          "71\t@USER That's because you are an old man.\tOFF\n");
    auto rows = load_olid(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].id == "09");
    CHECK(rows[0].gold_label == kNot);
    CHECK(rows[1].gold_label == kOff);
    CHECK(rows[1].text == "@USER That's because you are an old man.");
    CHECK_FALSE(rows[0].avg_conf.has_value());
  }
  SUBCASE("empty file after header") {
    write(path, "id\ttweet\tsubtask_a\n");
    CHECK(load_olid(path).empty());
  }
  SUBCASE("missing header") {
    write(path, "09\thello\tNOT\n");
    CHECK_THROWS_AS(load_olid(path), Error);
  }
  SUBCASE("unknown label names the line") {
    write(path, "id\ttweet\tsubtask_a\n09\thello\tMAYBE\n");
    CHECK_THROWS_WITH_AS(load_olid(path), doctest::Contains("line 2"), Error);
  }
  SUBCASE("wrong field count names the line") {
    write(path, "id\ttweet\tsubtask_a\n09\thello\n");
    CHECK_THROWS_WITH_AS(load_olid(path), doctest::Contains("line 2"), Error);
  }
  std::remove(path.c_str());
}

TEST_CASE("load_solid") {
  const std::string tp = "/tmp/olens_solid_text.tsv";
  const std::string lp = "/tmp/olens_solid_labels.tsv";

  SUBCASE("joins text and labels") {
    write(tp, "id\ttext\n167\tWant to watch this :D\n524\tyou are terrible\n");
    write(lp, "id\taverage\tstd\n167\t0.215\t0.188\n524\t0.691\t0.142\n");
    auto rows = load_solid(tp, lp);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].avg_conf == 0.215);
    CHECK(rows[0].conf_std == 0.188);
    CHECK(rows[1].avg_conf == 0.691);
    CHECK(rows[1].conf_std == 0.142);
    CHECK_FALSE(rows[0].gold_label.has_value());
  }
  SUBCASE("text without label is a join error naming the id") {
    write(tp, "id\ttext\n167\thello\n999\torphan\n");
    write(lp, "id\taverage\tstd\n167\t0.2\t0.1\n");
    CHECK_THROWS_WITH_AS(load_solid(tp, lp), doctest::Contains("999"), Error);
  }
  SUBCASE("label without text is a join error naming the id") {
    write(tp, "id\ttext\n167\thello\n");
    write(lp, "id\taverage\tstd\n167\t0.2\t0.1\n42\t0.3\t0.1\n");
    CHECK_THROWS_WITH_AS(load_solid(tp, lp), doctest::Contains("42"), Error);
  }
  SUBCASE("avg_conf outside [0,1] is rejected") {
    write(tp, "id\ttext\n167\thello\n");
    write(lp, "id\taverage\tstd\n167\t1.2\t0.1\n");
    CHECK_THROWS_AS(load_solid(tp, lp), Error);
  }
  std::remove(tp.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("dedup") {
  auto tweet = [](const char* id, const char* text) {
    return RawTweet{id, text, std::nullopt, std::nullopt, std::nullopt};
  };
  SUBCASE("removes exact trimmed duplicates, keeps first") {
    std::vector<RawTweet> in = {tweet("1", "a"), tweet("2", "b"), tweet("3", " a ")};
    auto [kept, removed] = dedup(in);
    REQUIRE(kept.size() == 2);
    CHECK(removed == 1);
    CHECK(kept[0].id == "1");
    CHECK(kept[1].id == "2");
  }
  SUBCASE("identity when no duplicates") {
    std::vector<RawTweet> in = {tweet("1", "a"), tweet("2", "b")};
    auto [kept, removed] = dedup(in);
    CHECK(kept.size() == 2);
    CHECK(removed == 0);
  }
  SUBCASE("idempotent") {
    std::vector<RawTweet> in = {tweet("1", "a"), tweet("2", "a"), tweet("3", "b")};
    auto [once, r1] = dedup(in);
    auto [twice, r2] = dedup(once);
    CHECK(r1 == 1);
    CHECK(r2 == 0);
    CHECK(once.size() == twice.size());
  }
}

TEST_CASE("threshold_label") {
  RawTweet t{"x", "text", std::nullopt, std::nullopt, std::nullopt};
  t.avg_conf = 0.215;
  CHECK(threshold_label(t) == kNot);
  t.avg_conf = 0.691;
  CHECK(threshold_label(t) == kOff);
  t.avg_conf = 0.5;
  CHECK(threshold_label(t) == kNot);  // strictly greater than
  t.avg_conf = 0.5000001;
  CHECK(threshold_label(t) == kOff);

  SUBCASE("monotone in avg_conf") {
    int prev = kNot;
    for (double c = 0.0; c <= 1.0; c += 0.01) {
      t.avg_conf = c;
      int cur = threshold_label(t);
      CHECK(cur >= prev);
      prev = cur;
    }
  }
  SUBCASE("missing avg_conf is a contract error") {
    RawTweet g{"y", "text", kNot, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(threshold_label(g), Error);
  }
}

TEST_CASE("slice_counts reproduces the published arithmetic") {
  CHECK(slice_counts(13240, 0.1) == std::pair<long long, long long>{11916, 1324});
  CHECK(slice_counts(8996730, 0.005) == std::pair<long long, long long>{8951747, 44983});
  CHECK(slice_counts(1000, 0.1) == std::pair<long long, long long>{900, 100});
  CHECK(slice_counts(0, 0.1) == std::pair<long long, long long>{0, 0});
  auto [tr, dv] = slice_counts(8996730, 0.005);
  CHECK(tr + dv == 8996730);
  CHECK_THROWS_AS(slice_counts(10, 1.5), Error);
}

TEST_CASE("make_split") {
  SyntheticSpec spec;
  spec.n = 400;
  auto data = generate_synthetic(spec);
  auto [solid_dedup, removed] = dedup(data.solid);
  SplitPlan plan;
  plan.seed = 42;

  SUBCASE("PT-C-C / E: 90/10 OLID with test appended to dev") {
    plan.stage = Stage::PT_C_C;
    auto r = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    CHECK(r.counts.at("train.olid") == 180);  // floor arithmetic on 200
    CHECK(r.counts.at("dev.olid") == 20);
    CHECK(r.counts.at("dev.olidtest") == 20);
    CHECK(r.train.size() == 180);
    CHECK(r.dev.size() == 40);
    for (const auto& e : r.train) CHECK(e.kind == TargetKind::Class);

    auto train_ids = ids_of(r.train), dev_ids = ids_of(r.dev);
    for (const auto& id : dev_ids) CHECK(train_ids.count(id) == 0);

    plan.stage = Stage::E;
    auto e = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    CHECK(ids_of(e.train) == train_ids);  // ensemble trains on the same rows
  }

  SUBCASE("FT: the SOLID portion equals the PT-R train rows") {
    plan.stage = Stage::FT;
    auto ft = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    plan.stage = Stage::PT_R;
    auto ptr = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);

    CHECK(ft.counts.at("train.solid") == ptr.counts.at("train.solid"));
    std::vector<std::string> ft_solid_ids;
    for (const auto& e : ft.train)
      if (e.id.rfind("solid:", 0) == 0) ft_solid_ids.push_back(e.id);
    std::vector<std::string> ptr_ids;
    for (const auto& e : ptr.train) ptr_ids.push_back(e.id);
    CHECK(ft_solid_ids == ptr_ids);  // same rows in the same order
    for (const auto& e : ft.train) CHECK(e.kind == TargetKind::Class);
  }

  SUBCASE("PT-R keeps confidences, PT-C thresholds them") {
    plan.stage = Stage::PT_R;
    auto r = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    auto [want_train, want_dev] =
        slice_counts(static_cast<long long>(solid_dedup.size()), 0.005);
    CHECK(r.counts.at("train.solid") == want_train);
    CHECK(r.counts.at("dev.solid") == want_dev);
    for (const auto& e : r.train) {
      CHECK(e.kind == TargetKind::Confidence);
      CHECK(e.target >= 0.0);
      CHECK(e.target <= 1.0);
    }
    plan.stage = Stage::PT_C;
    auto c = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    for (const auto& e : c.train) {
      CHECK(e.kind == TargetKind::Class);
      CHECK((e.target == 0.0 || e.target == 1.0));
    }
    CHECK(c.train.size() == r.train.size());
  }

  SUBCASE("PT combines all sources unlabeled with no dev") {
    plan.stage = Stage::PT;
    auto r = make_split(plan, data.olid_train, data.olid_test, data.solid, data.task_test);
    CHECK(r.train.size() == data.olid_train.size() + data.olid_test.size() +
                                data.solid.size() + data.task_test.size());
    CHECK(r.dev.empty());
    for (const auto& e : r.train) CHECK(e.kind == TargetKind::None);
  }

  SUBCASE("deterministic across calls") {
    plan.stage = Stage::FT;
    auto a = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    auto b = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);
    plan.seed = 7;
    auto c = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);
    bool same_order = true;
    for (std::size_t i = 0; i < a.train.size(); ++i)
      same_order = same_order && a.train[i].id == c.train[i].id;
    CHECK_FALSE(same_order);
  }

  SUBCASE("empty sources are rejected") {
    plan.stage = Stage::FT;
    CHECK_THROWS_AS(make_split(plan, {}, data.olid_test, solid_dedup, data.task_test), Error);
    CHECK_THROWS_AS(make_split(plan, data.olid_train, data.olid_test, {}, data.task_test),
                    Error);
  }
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.n = 2000;
  spec.dup_rate = 0.01;
  spec.off_rate = 0.33;
  spec.seed = 42;
  auto data = generate_synthetic(spec);

  SUBCASE("corpus sizes scale from n") {
    CHECK(data.solid.size() == 2000);
    CHECK(data.olid_train.size() == 1000);
    CHECK(data.olid_test.size() == 100);
    CHECK(data.task_test.size() == 200);
    CHECK(data.generic.size() == 1000);
  }

  SUBCASE("dedup removes exactly the injected duplicates, about 1%") {
    auto [kept, removed] = dedup(data.solid);
    std::unordered_set<std::string> distinct;
    for (const auto& t : data.solid) distinct.insert(t.text);
    CHECK(removed == static_cast<long long>(data.solid.size() - distinct.size()));
    CHECK(removed >= 12);  // 20 +/- 8 per the binomial bound at rate 0.01
    CHECK(removed <= 28);
    CHECK(kept.size() + static_cast<std::size_t>(removed) == data.solid.size());
  }

  SUBCASE("confidences separate cleanly around the threshold") {
    for (const auto& t : data.solid) {
      REQUIRE(t.avg_conf.has_value());
      bool low = *t.avg_conf < 0.4;
      bool high = *t.avg_conf > 0.6;
      CHECK((low || high));
      CHECK(*t.conf_std >= 0.0);
    }
  }

  SUBCASE("off rate lands near the requested fraction") {
    int off = 0;
    for (const auto& t : data.olid_train) off += *t.gold_label == kOff;
    CHECK(off > 260);
    CHECK(off < 400);
  }

  SUBCASE("offensive texts carry a marker token, benign never do") {
    const char* markers[] = {"dingus", "nitwit",  "numpty", "dunderhead",
                             "clodpole", "ninny", "twit",   "goof"};
    for (const auto& t : data.olid_train) {
      bool has_marker = false;
      for (const char* m : markers)
        if (t.text.find(m) != std::string::npos) has_marker = true;
      CHECK(has_marker == (*t.gold_label == kOff));
    }
  }

  SUBCASE("same spec regenerates identical corpora") {
    auto again = generate_synthetic(spec);
    REQUIRE(again.solid.size() == data.solid.size());
    for (std::size_t i = 0; i < data.solid.size(); ++i) {
      CHECK(again.solid[i].text == data.solid[i].text);
      CHECK(again.solid[i].avg_conf == data.solid[i].avg_conf);
    }
    CHECK(again.generic == data.generic);
  }

  SUBCASE("parameter validation") {
    SyntheticSpec bad = spec;
    bad.n = 10;
    CHECK_THROWS_AS(generate_synthetic(bad), Error);
    bad = spec;
    bad.dup_rate = 1.0;
    CHECK_THROWS_AS(generate_synthetic(bad), Error);
    bad = spec;
    bad.off_rate = 0.0;
    CHECK_THROWS_AS(generate_synthetic(bad), Error);
  }
}

TEST_CASE("split manifest bytes are deterministic") {
  SyntheticSpec spec;
  spec.n = 200;
  auto data = generate_synthetic(spec);
  auto [solid_dedup, removed] = dedup(data.solid);
  SplitPlan plan;
  plan.stage = Stage::FT;
  auto r = make_split(plan, data.olid_train, data.olid_test, solid_dedup, data.task_test);

  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  write_split_manifest("/tmp/olens_split1.tsv", r);
  write_split_manifest("/tmp/olens_split2.tsv", r);
  auto b1 = slurp("/tmp/olens_split1.tsv");
  CHECK(b1 == slurp("/tmp/olens_split2.tsv"));
  CHECK(b1.find("solid:") != std::string::npos);
  CHECK(b1.find("\ttrain\t") != std::string::npos);
  CHECK(b1.find("\tdev\t") != std::string::npos);
  std::remove("/tmp/olens_split1.tsv");
  std::remove("/tmp/olens_split2.tsv");
}
