#include <string>
#include <unordered_set>
#include <vector>

#include "olens/data.hpp"
#include "olens/error.hpp"

// Synthetic corpus generator. Sentences are templated over a closed word list
// plus a large numbered-filler family ("garden17"), which keeps texts unique
// without touching the class signal. Offensive rows always contain one marker
// token, so a small encoder can learn the class from one lexical feature.

namespace olens {

namespace {

const char* kMarkers[] = {"dingus", "nitwit",  "numpty", "dunderhead",
                          "clodpole", "ninny", "twit",   "goof"};
const char* kSubjects[] = {"you",        "that guy",   "my neighbor",
                           "the driver", "her cousin", "this referee"};
const char* kAdjectives[] = {"lovely", "quiet", "bright", "gentle", "cheerful", "calm"};
const char* kNouns[] = {"garden", "kitchen", "harbor", "meadow", "library", "market"};

template <class T, std::size_t N>
const T& pick(const T (&arr)[N], RngStream& rng) {
  return arr[rng.next_below(N)];
}

struct TextFactory {
  std::unordered_set<std::string> seen;
  long long filler_space;
  long long fallback = 0;

  std::string filler(RngStream& rng) {
    return std::string(pick(kNouns, rng)) + std::to_string(rng.next_below(
               static_cast<std::uint64_t>(filler_space)));
  }

  std::string offensive(RngStream& rng) {
    const std::string m = pick(kMarkers, rng);
    const std::string f = filler(rng);
    const std::string s = pick(kSubjects, rng);
    switch (rng.next_below(4)) {
      case 0: return s + " from the " + f + " is a complete " + m;
      case 1: return "only a " + m + " would block the " + f + " like that";
      case 2: return s + " acted like a " + m + " near the " + f;
      default: return "honestly the " + m + " ruined the " + f + " meetup";
    }
  }

  std::string benign(RngStream& rng) {
    const std::string f = filler(rng);
    const std::string a = pick(kAdjectives, rng);
    switch (rng.next_below(4)) {
      case 0: return "the " + f + " looks " + a + " today";
      case 1: return "we walked past the " + f + " after lunch";
      case 2: return "please water the plants near the " + f;
      default: return "the " + f + " was " + a + " all morning";
    }
  }

  std::string generic(RngStream& rng) {
    const std::string f = filler(rng);
    switch (rng.next_below(4)) {
      case 0: return "the committee approved the " + f + " proposal";
      case 1: return "students gathered near the " + f + " yesterday";
      case 2: return "volunteers cleaned the " + f + " over the weekend";
      default: return "the " + f + " reopened after repairs";
    }
  }

  // Unique sentence of the requested kind; resamples on collision, with a
  // deterministic suffix fallback so generation always terminates.
  std::string unique(bool offensive_kind, bool generic_kind, RngStream& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::string s = generic_kind ? generic(rng) : offensive_kind ? offensive(rng) : benign(rng);
      if (seen.insert(s).second) return s;
    }
    std::string s = (generic_kind ? generic(rng) : offensive_kind ? offensive(rng) : benign(rng)) +
                    " extra" + std::to_string(fallback++);
    seen.insert(s);
    return s;
  }
};

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 40)
    raise(ErrorKind::Value, "generate_synthetic: need n >= 40, got " + std::to_string(spec.n));
  if (spec.dup_rate < 0.0 || spec.dup_rate >= 1.0)
    raise(ErrorKind::Value, "generate_synthetic: dup_rate outside [0,1)");
  if (spec.off_rate <= 0.0 || spec.off_rate >= 1.0)
    raise(ErrorKind::Value, "generate_synthetic: off_rate outside (0,1)");

  RngStream root(spec.seed);
  TextFactory factory;
  factory.filler_space = std::max<long long>(64, spec.n);
  SyntheticData data;

  auto labeled_corpus = [&](const char* name, long long count) {
    RngStream rng = root.fork(std::string("synthetic:") + name);
    std::vector<RawTweet> rows;
    rows.reserve(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i) {
      const bool off = rng.next_double() < spec.off_rate;
      RawTweet t;
      t.id = std::to_string(i);
      t.text = factory.unique(off, false, rng);
      t.gold_label = off ? kOff : kNot;
      rows.push_back(std::move(t));
    }
    return rows;
  };

  data.olid_train = labeled_corpus("olid_train", spec.n / 2);
  data.olid_test = labeled_corpus("olid_test", spec.n / 20);
  data.task_test = labeled_corpus("task_test", spec.n / 10);

  {
    RngStream rng = root.fork("synthetic:solid");
    data.solid.reserve(static_cast<std::size_t>(spec.n));
    for (long long i = 0; i < spec.n; ++i) {
      RawTweet t;
      t.id = std::to_string(i);
      if (i > 0 && rng.next_double() < spec.dup_rate) {
        // Intentional duplicate of an earlier row: same text, same confidence.
        const RawTweet& src = data.solid[rng.next_below(static_cast<std::uint64_t>(i))];
        t.text = src.text;
        t.avg_conf = src.avg_conf;
        t.conf_std = src.conf_std;
      } else {
        const bool off = rng.next_double() < spec.off_rate;
        t.text = factory.unique(off, false, rng);
        // Confidences sit cleanly on either side of the 0.5 threshold.
        t.avg_conf = off ? 0.62 + 0.33 * rng.next_double() : 0.05 + 0.33 * rng.next_double();
        t.conf_std = 0.05 + 0.20 * rng.next_double();
      }
      data.solid.push_back(std::move(t));
    }
  }

  {
    RngStream rng = root.fork("synthetic:generic");
    const long long count = spec.n / 2;
    data.generic.reserve(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i) data.generic.push_back(factory.unique(false, true, rng));
  }
  return data;
}

std::vector<std::string> all_texts(const SyntheticData& data) {
  std::vector<std::string> out;
  out.reserve(data.olid_train.size() + data.olid_test.size() + data.solid.size() +
              data.task_test.size() + data.generic.size());
  for (const auto& t : data.olid_train) out.push_back(t.text);
  for (const auto& t : data.olid_test) out.push_back(t.text);
  for (const auto& t : data.solid) out.push_back(t.text);
  for (const auto& t : data.task_test) out.push_back(t.text);
  for (const auto& s : data.generic) out.push_back(s);
  return out;
}

}  // namespace olens
