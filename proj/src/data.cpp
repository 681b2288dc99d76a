#include "meftlab/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "meftlab/config.hpp"

namespace meftlab {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4, "truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    need(4, "truncated record");
    const std::uint32_t bits = u32();
    return std::bit_cast<float>(bits);
  }

  void expect(std::string_view magic) {
    if (bytes_.size() < magic.size() || bytes_.compare(0, magic.size(), magic) != 0) {
      throw FormatError("bad magic", 0);
    }
    pos_ = magic.size();
  }

  [[nodiscard]] std::size_t pos() const { return pos_; }
  [[nodiscard]] bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(what, pos_);
  }

  std::string bytes_;
  std::size_t pos_{0};
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (n_classes < 2) throw ConfigError("task.n_classes must be >= 2");
  if (seq_len < 1 || d_input < 2) throw ConfigError("task.seq_len >= 1 and task.d_input >= 2 required");
  if (noise_std < 0.0) throw ConfigError("task.noise_std must be >= 0");
  const auto sigs = resolved_signatures();
  if (sigs.size() != static_cast<std::size_t>(n_classes)) {
    throw ConfigError("task.signatures needs one pair per class");
  }
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : sigs) {
    if (a == b || a < 0 || b < 0 || a >= d_input || b >= d_input) {
      throw ConfigError("task.signatures pair (" + std::to_string(a) + "," + std::to_string(b) +
                        ") is not two distinct channels");
    }
    if (!seen.insert(std::minmax(a, b)).second) throw ConfigError("task.signatures must be distinct");
  }
}

std::vector<std::pair<int, int>> SyntheticTaskSpec::resolved_signatures() const {
  return signatures.empty() ? default_signatures(n_classes, d_input) : signatures;
}

std::vector<std::pair<int, int>> default_signatures(int n_classes, int d_input) {
  std::vector<std::pair<int, int>> out;
  for (int s = 1; s < d_input && static_cast<int>(out.size()) < n_classes; ++s) {
    for (int a = 0; a + s < d_input && static_cast<int>(out.size()) < n_classes; ++a) {
      if ((a / s) % 2 == 0) out.emplace_back(a, a + s);
    }
  }
  if (static_cast<int>(out.size()) < n_classes) {
    throw ConfigError("d_input=" + std::to_string(d_input) + " has too few channel pairs for " +
                      std::to_string(n_classes) + " classes");
  }
  return out;
}

Dataset gen_synthetic(const SyntheticTaskSpec& spec, std::size_t count, std::uint64_t seed) {
  spec.validate();
  if (count < static_cast<std::size_t>(spec.n_classes)) throw ConfigError("task needs at least K samples");
  const auto sigs = spec.resolved_signatures();
  const auto n = static_cast<std::size_t>(spec.seq_len);
  const auto d = static_cast<std::size_t>(spec.d_input);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.n_classes = spec.n_classes;
  data.items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % static_cast<std::size_t>(spec.n_classes);
    const auto [a, b] = sigs[label];
    Buffer x(n * d);
    for (std::size_t t = 0; t < n; ++t) {
      double* row = &x[t * d];
      const double carrier = coin(rng) ? 1.0 : -1.0;
      row[a] = row[b] = spec.nonlinear ? carrier : 1.0;
      for (std::size_t c = 0; c < d; ++c) row[c] += spec.noise_std * noise(rng);
    }
    data.items.push_back({Tensor({n, d}, std::move(x)), label});
  }
  return data;
}

Split split_stratified(const Dataset& data, double train_fraction) {
  Split s;
  s.train.n_classes = s.eval.n_classes = data.n_classes;
  std::vector<std::size_t> per_class(static_cast<std::size_t>(data.n_classes), 0);
  for (const auto& item : data.items) ++per_class.at(item.label);
  std::vector<std::size_t> seen(per_class.size(), 0);
  for (const auto& item : data.items) {
    const std::size_t quota =
        std::max<std::size_t>(1, static_cast<std::size_t>(train_fraction * static_cast<double>(per_class[item.label])));
    (seen[item.label]++ < quota ? s.train : s.eval).items.push_back(item);
  }
  return s;
}

void write_mfb1(const std::string& path, const std::vector<Tensor>& records) {
  std::string out = "MFB1";
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.rows()));
    put_u32(out, static_cast<std::uint32_t>(r.cols()));
    for (double v : r.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<Tensor> read_mfb1(const std::string& path) {
  Reader r(slurp(path));
  r.expect("MFB1");
  const std::uint32_t count = r.u32();
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Buffer v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = r.f32();
    out.emplace_back(Shape{rows, cols}, std::move(v));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last record", r.pos());
  return out;
}

void write_labels(const std::string& path, const std::vector<std::size_t>& labels) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t l : labels) f << l << '\n';
}

std::vector<std::size_t> read_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::size_t> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(line, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || v < 0) throw FormatError("bad label '" + line + "' on line " + std::to_string(line_no), line_no);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Dataset load_features(const std::string& feature_path, const std::string& label_path, int seq_len,
                      int d_input, int n_classes) {
  const auto records = read_mfb1(feature_path);
  const auto labels = read_labels(label_path);
  if (records.size() != labels.size()) {
    throw std::runtime_error("label/feature count mismatch: " + std::to_string(records.size()) +
                             " records, " + std::to_string(labels.size()) + " labels");
  }
  const auto n = static_cast<std::size_t>(seq_len);
  const auto d = static_cast<std::size_t>(d_input);
  Dataset data;
  data.n_classes = n_classes;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tensor& r = records[i];
    if (r.cols() != d) {
      throw std::runtime_error("record " + std::to_string(i) + " has " + std::to_string(r.cols()) +
                               " feature bins, expected " + std::to_string(d));
    }
    if (labels[i] >= static_cast<std::size_t>(n_classes)) {
      throw std::runtime_error("label " + std::to_string(labels[i]) + " out of range for record " +
                               std::to_string(i));
    }
    Buffer x(n * d, 0.0);
    const std::size_t keep = std::min(n, r.rows());
    std::copy_n(r.data().begin(), keep * d, x.begin());
    data.items.push_back({Tensor({n, d}, std::move(x)), labels[i]});
  }
  return data;
}

}  // namespace meftlab
