#pragma once
//
// Clip metadata, uploader-based client partitioning and the synthetic
// non-IID task generator.
//
// Manifest format: comma-separated text with a header row naming at least
//   clip_id,uploader,labels,split
// and optionally duration_s. Columns may appear in any order. `labels` holds
// class names separated by '|'. Fields may be double-quoted; a doubled quote
// inside a quoted field is a literal quote.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct ClipRecord {
  std::string clip_id;
  std::string uploader;
  std::set<std::string> labels;
  Split split = Split::train;
  std::optional<double> duration_s;
};

// One simulated device: its identifier and its private examples.
struct ClientDataset {
  std::string id;
  LabeledBatch examples;

  std::size_t n() const noexcept { return examples.size(); }
};

// Centrally held evaluation data. When `groups` is non-empty, rows sharing a
// group id are patches of one clip and are scored as a unit.
struct EvalSet {
  LabeledBatch batch;
  std::vector<std::uint32_t> groups;

  EvalSet() = default;
  EvalSet(LabeledBatch b, std::vector<std::uint32_t> g = {})  // NOLINT: implicit on purpose
      : batch(std::move(b)), groups(std::move(g)) {}

  std::size_t size() const noexcept { return batch.size(); }
  bool grouped() const noexcept { return !groups.empty(); }
};

// Everything a federated run consumes.
struct FederatedTask {
  std::vector<std::string> classes;
  std::vector<ClientDataset> clients;
  EvalSet eval;

  std::size_t input_dim() const {
    return eval.batch.inputs.cols() ? eval.batch.inputs.cols()
                                    : (clients.empty() ? 0 : clients.front().examples.inputs.cols());
  }

  // All client data concatenated in client order.
  LabeledBatch pooled() const {
    LabeledBatch out;
    for (const auto& c : clients)
      for (std::size_t r = 0; r < c.n(); ++r) {
        out.inputs.append_row(c.examples.inputs.row(r));
        out.targets.append_row(c.examples.targets.row(r));
      }
    return out;
  }
};

namespace detail {

// Splits one CSV record. Returns false on an unterminated quote.
inline bool split_csv_line(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return !quoted;
}

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  return s.substr(i);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val" || s == "validation") return Split::val;
  if (s == "test" || s == "eval") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

inline std::vector<ClipRecord> parse_manifest(std::istream& in, const std::string& source = "manifest") {
  auto fail = [&](std::size_t line, const std::string& what) -> ValidationError {
    return ValidationError(source + ": line " + std::to_string(line) + ": " + what);
  };

  std::string line;
  std::vector<std::string> fields;
  if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::split_csv_line(line, fields);

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < fields.size(); ++i) col[detail::trim(fields[i])] = i;
  for (const char* name : {"clip_id", "uploader", "labels", "split"})
    if (!col.count(name)) throw fail(1, std::string("missing column '") + name + "'");
  const std::optional<std::size_t> dur_col =
      col.count("duration_s") ? std::optional(col["duration_s"]) : std::nullopt;

  std::size_t needed = 0;
  for (const auto& [_, idx] : col) needed = std::max(needed, idx + 1);

  std::vector<ClipRecord> out;
  std::unordered_set<std::string> seen;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    if (!detail::split_csv_line(line, fields)) throw fail(lineno, "unterminated quoted field");
    if (fields.size() < needed) throw fail(lineno, "missing column value");

    ClipRecord rec;
    rec.clip_id = detail::trim(fields[col["clip_id"]]);
    rec.uploader = detail::trim(fields[col["uploader"]]);
    if (rec.clip_id.empty()) throw fail(lineno, "empty clip_id");
    if (!seen.insert(rec.clip_id).second) throw fail(lineno, "duplicate clip_id '" + rec.clip_id + "'");
    if (rec.uploader.empty()) throw fail(lineno, "empty uploader");

    std::stringstream labels(fields[col["labels"]]);
    for (std::string lab; std::getline(labels, lab, '|');) {
      lab = detail::trim(lab);
      if (!lab.empty()) rec.labels.insert(lab);
    }
    if (rec.labels.empty()) throw fail(lineno, "empty label field");

    try {
      rec.split = parse_split(detail::trim(fields[col["split"]]));
    } catch (const ValidationError& e) {
      throw fail(lineno, e.what());
    }
    if (dur_col) {
      const std::string d = detail::trim(fields[*dur_col]);
      if (!d.empty()) {
        char* end = nullptr;
        const double v = std::strtod(d.c_str(), &end);
        if (end == d.c_str() || *end != '\0' || !(v > 0.0))
          throw fail(lineno, "duration_s must be a positive number");
        rec.duration_s = v;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ClipRecord> ingest_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest '" + path + "'");
  return parse_manifest(in, path);
}

inline void write_manifest(std::ostream& out, const std::vector<ClipRecord>& clips) {
  out << "clip_id,uploader,labels,split,duration_s\n";
  for (const auto& c : clips) {
    std::string labels;
    for (const auto& l : c.labels) labels += (labels.empty() ? "" : "|") + l;
    out << detail::csv_escape(c.clip_id) << ',' << detail::csv_escape(c.uploader) << ','
        << detail::csv_escape(labels) << ',' << to_string(c.split) << ',';
    if (c.duration_s) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", *c.duration_s);
      out << buf;
    }
    out << '\n';
  }
}

// Sorted set of all class names used by any clip.
inline std::vector<std::string> vocabulary(const std::vector<ClipRecord>& clips) {
  std::set<std::string> all;
  for (const auto& c : clips) all.insert(c.labels.begin(), c.labels.end());
  return {all.begin(), all.end()};
}

// An uploader's train clips (indices into the ingested clip list).
struct ClientPartition {
  std::string client_id;
  std::vector<std::size_t> clips;

  std::size_t n() const noexcept { return clips.size(); }
};

// Groups train-split clips by uploader and keeps uploaders with at least
// `min_clips` clips, sorted by uploader name.
inline std::vector<ClientPartition> partition_by_uploader(const std::vector<ClipRecord>& clips,
                                                          std::size_t min_clips) {
  detail::require(!clips.empty(), "partition_by_uploader: no clips");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == Split::train) groups[clips[i].uploader].push_back(i);
  std::vector<ClientPartition> out;
  for (auto& [uploader, idx] : groups)
    if (idx.size() >= min_clips) out.push_back({uploader, std::move(idx)});
  return out;
}

// Train-split uploaders bucketed by how many clips each contributed.
struct UploaderHistogram {
  std::size_t one = 0;             // exactly 1 clip
  std::size_t two_to_ten = 0;      // 2..10
  std::size_t eleven_to_99 = 0;    // 11..99
  std::size_t hundred_plus = 0;    // >= 100

  std::size_t uploaders() const noexcept { return one + two_to_ten + eleven_to_99 + hundred_plus; }
  std::size_t at_most_ten() const noexcept { return one + two_to_ten; }

  friend bool operator==(const UploaderHistogram&, const UploaderHistogram&) = default;
};

inline UploaderHistogram uploader_histogram(const std::vector<ClipRecord>& clips) {
  detail::require(!clips.empty(), "uploader_histogram: no clips");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& c : clips)
    if (c.split == Split::train) ++counts[c.uploader];
  UploaderHistogram h;
  for (const auto& [_, n] : counts) {
    if (n == 1) ++h.one;
    else if (n <= 10) ++h.two_to_ten;
    else if (n < 100) ++h.eleven_to_99;
    else ++h.hundred_plus;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic non-IID task

struct SynthTaskSpec {
  std::size_t num_clients = 20;
  std::size_t num_classes = 8;
  std::size_t input_dim = 16;
  double size_exponent = 1.5;   // density of client sizes ~ n^-exponent
  std::size_t min_size = 20;
  std::size_t max_size = 400;
  double concentration = 0.1;   // Dirichlet parameter per class; small = strong skew
  double eval_fraction = 0.2;   // share of all generated examples held centrally
  double noise = 1.0;           // std of additive Gaussian input noise
  double extra_label_prob = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(num_clients >= 1 && num_classes >= 1 && input_dim >= 1,
                    "synth: counts must be >= 1");
    detail::require(min_size >= 1, "synth: min_size must be >= 1");
    detail::require(min_size <= max_size, "synth: min_size > max_size");
    detail::require(size_exponent >= 0.0, "synth: size exponent must be >= 0");
    detail::require(concentration > 0.0, "synth: concentration must be > 0");
    detail::require(eval_fraction > 0.0 && eval_fraction < 1.0, "synth: eval_fraction must be in (0,1)");
    detail::require(noise >= 0.0, "synth: noise must be >= 0");
    detail::require(extra_label_prob >= 0.0 && extra_label_prob <= 1.0,
                    "synth: extra_label_prob must be in [0,1]");
  }
};

struct SynthTask {
  FederatedTask task;
  Matrix prototypes;                                   // [num_classes x input_dim]
  std::vector<std::vector<double>> class_proportions;  // per client, sums to 1
  std::vector<std::size_t> drawn_sizes;
};

namespace detail {

// Inverse-CDF draw from a power law on [lo, hi + 1), floored to an integer.
inline std::size_t draw_power_law(Rng& rng, double exponent, std::size_t lo, std::size_t hi) {
  const double a = static_cast<double>(lo), b = static_cast<double>(hi) + 1.0;
  const double u = rng.uniform();
  double x;
  if (std::abs(exponent - 1.0) < 1e-12) {
    x = a * std::pow(b / a, u);
  } else {
    const double k = 1.0 - exponent;
    x = std::pow(std::pow(a, k) + u * (std::pow(b, k) - std::pow(a, k)), 1.0 / k);
  }
  return std::clamp(static_cast<std::size_t>(std::floor(x)), lo, hi);
}

inline std::vector<double> draw_dirichlet(Rng& rng, std::size_t k, double alpha) {
  std::vector<double> logs(k);
  for (auto& l : logs) l = rng.log_gamma_variate(alpha);
  const double mx = *std::max_element(logs.begin(), logs.end());
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += p[i] = std::exp(logs[i] - mx);
  for (auto& v : p) v /= sum;
  return p;
}

inline std::size_t draw_categorical(Rng& rng, std::span<const double> p) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding left a sliver above the last cumulative value.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return p.size() - 1;
}

inline void synth_example(Rng& rng, const SynthTaskSpec& spec, const Matrix& prototypes,
                          std::size_t primary, std::span<const double> proportions,
                          LabeledBatch& out) {
  std::vector<double> target(spec.num_classes, 0.0);
  target[primary] = 1.0;
  if (rng.uniform() < spec.extra_label_prob) target[draw_categorical(rng, proportions)] = 1.0;
  std::vector<double> x(spec.input_dim, 0.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    if (target[c] == 0.0) continue;
    auto proto = prototypes.row(c);
    for (std::size_t d = 0; d < spec.input_dim; ++d) x[d] += proto[d];
  }
  for (auto& v : x) v += spec.noise * rng.normal();
  out.inputs.append_row(x);
  out.targets.append_row(target);
}

}  // namespace detail

// Clients with power-law sizes and Dirichlet label skew; inputs are sums of
// per-class Gaussian prototypes plus noise. The evaluation set follows the
// uniform global class mix and cycles through every class at least once.
inline SynthTask synth_federated_task(const SynthTaskSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, Stream::synth));
  SynthTask out;
  auto& task = out.task;
  for (std::size_t c = 0; c < spec.num_classes; ++c) task.classes.push_back("class_" + std::to_string(c));

  out.prototypes = Matrix(spec.num_classes, spec.input_dim);
  for (double& v : out.prototypes.data()) v = rng.normal();

  std::size_t total = 0;
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    const std::size_t n = detail::draw_power_law(rng, spec.size_exponent, spec.min_size, spec.max_size);
    out.drawn_sizes.push_back(n);
    out.class_proportions.push_back(detail::draw_dirichlet(rng, spec.num_classes, spec.concentration));
    total += n;
  }

  const std::size_t width = std::to_string(spec.num_clients - 1).size();
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    std::string id = std::to_string(k);
    id = "client_" + std::string(width - id.size(), '0') + id;
    ClientDataset client{std::move(id), {}};
    const auto& prop = out.class_proportions[k];
    for (std::size_t i = 0; i < out.drawn_sizes[k]; ++i)
      detail::synth_example(rng, spec, out.prototypes, detail::draw_categorical(rng, prop), prop,
                            client.examples);
    task.clients.push_back(std::move(client));
  }

  const std::vector<double> global(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
  const auto eval_n = std::max<std::size_t>(
      spec.num_classes,
      static_cast<std::size_t>(std::llround(spec.eval_fraction / (1.0 - spec.eval_fraction) *
                                            static_cast<double>(total))));
  LabeledBatch eval;
  for (std::size_t i = 0; i < eval_n; ++i) {
    const std::size_t primary = i < spec.num_classes ? i : detail::draw_categorical(rng, global);
    detail::synth_example(rng, spec, out.prototypes, primary, global, eval);
  }
  task.eval = EvalSet(std::move(eval));
  return out;
}

// Manifest rows describing a synthetic task (one clip per example).
inline std::vector<ClipRecord> task_manifest(const FederatedTask& task) {
  std::vector<ClipRecord> out;
  auto labels_of = [&](const LabeledBatch& b, std::size_t r) {
    std::set<std::string> s;
    for (std::size_t c = 0; c < b.targets.cols(); ++c)
      if (b.targets(r, c) > 0.5) s.insert(task.classes[c]);
    return s;
  };
  for (const auto& client : task.clients)
    for (std::size_t r = 0; r < client.n(); ++r)
      out.push_back({client.id + "-" + std::to_string(r), client.id, labels_of(client.examples, r),
                     Split::train, std::nullopt});
  std::set<std::size_t> seen_groups;
  for (std::size_t r = 0; r < task.eval.size(); ++r) {
    const std::size_t g = task.eval.grouped() ? task.eval.groups[r] : r;
    if (!seen_groups.insert(g).second) continue;
    out.push_back({"eval-" + std::to_string(g), "central", labels_of(task.eval.batch, r), Split::val,
                   std::nullopt});
  }
  return out;
}

}  // namespace fedsim
