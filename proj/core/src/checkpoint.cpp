#include "coppkit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace coppkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IngestError("checkpoint: cannot open for writing: " + path);
    out_.write(kModelMagic, sizeof(kModelMagic) - 1);
  }

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void net(const Mlp& m) {
    const MlpSpec& spec = m.spec();
    u32(static_cast<std::uint32_t>(spec.input_dim));
    u32(static_cast<std::uint32_t>(spec.hidden_sizes.size()));
    for (int h : spec.hidden_sizes) u32(static_cast<std::uint32_t>(h));
    u32(static_cast<std::uint32_t>(spec.output_dim));
    const std::vector<double> params = m.flat_params();
    u32(static_cast<std::uint32_t>(params.size()));
    raw(params.data(), params.size() * sizeof(double));
  }

  void done(const std::string& path) {
    out_.flush();
    if (!out_) throw IngestError("checkpoint: write failed: " + path);
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IngestError("checkpoint: cannot open: " + path);
    char magic[sizeof(kModelMagic) - 1];
    raw(magic, sizeof magic);
    if (std::memcmp(magic, kModelMagic, sizeof magic) != 0)
      throw IngestError("checkpoint: bad magic header in " + path);
  }

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }

  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }

  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  Mlp net() {
    MlpSpec spec;
    spec.input_dim = static_cast<int>(u32());
    const std::uint32_t n_hidden = u32();
    spec.hidden_sizes.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i)
      spec.hidden_sizes.push_back(static_cast<int>(u32()));
    spec.output_dim = static_cast<int>(u32());
    Mlp m(spec);
    const std::uint32_t count = u32();
    if (count != m.param_count())
      throw IngestError("checkpoint: parameter count mismatch in " + path_);
    std::vector<double> params(count);
    raw(params.data(), params.size() * sizeof(double));
    m.set_flat_params(params);
    return m;
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw IngestError("checkpoint: truncated file: " + path_);
  }
  std::ifstream in_;
  std::string path_;
};

Reader open_kind(const std::string& path, const std::string& expected) {
  Reader r(path);
  const std::string kind = r.str();
  if (kind != expected)
    throw IngestError("checkpoint: expected kind '" + expected + "' but found '" + kind +
                      "' in " + path);
  return r;
}

}  // namespace

void save_model(const QuantilePair& m, const std::string& path) {
  Writer w(path);
  w.str("quantile_pair");
  w.f64(m.alpha_lo());
  w.f64(m.alpha_hi());
  w.net(m.lo_net());
  w.net(m.hi_net());
  w.done(path);
}

void save_model(const GaussianConditional& m, const std::string& path) {
  Writer w(path);
  w.str("gaussian_conditional");
  w.u32(m.action_kind() == ActionKind::Discrete ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(m.num_actions()));
  w.net(m.mu_net());
  w.net(m.sigma_net());
  w.done(path);
}

void save_model(const SoftmaxPolicyModel& m, const std::string& path) {
  Writer w(path);
  w.str("softmax_policy");
  w.u32(static_cast<std::uint32_t>(m.num_classes()));
  w.net(m.net());
  w.done(path);
}

void save_model(const GaussianPolicyModel& m, const std::string& path) {
  Writer w(path);
  w.str("gaussian_policy");
  w.f64(m.stddev());
  w.net(m.net());
  w.done(path);
}

void save_model(const SoftmaxConditional& m, const std::string& path) {
  Writer w(path);
  w.str("softmax_conditional");
  w.u32(m.action_kind() == ActionKind::Discrete ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(m.num_actions()));
  w.u32(static_cast<std::uint32_t>(m.num_labels()));
  w.net(m.net());
  w.done(path);
}

std::string checkpoint_kind(const std::string& path) {
  Reader r(path);
  return r.str();
}

QuantilePair load_quantile_pair(const std::string& path) {
  Reader r = open_kind(path, "quantile_pair");
  const double alpha_lo = r.f64();
  const double alpha_hi = r.f64();
  Mlp lo = r.net();
  Mlp hi = r.net();
  return QuantilePair(std::move(lo), std::move(hi), alpha_lo, alpha_hi);
}

GaussianConditional load_gaussian_conditional(const std::string& path) {
  Reader r = open_kind(path, "gaussian_conditional");
  const ActionKind kind = r.u32() == 0 ? ActionKind::Discrete : ActionKind::Continuous;
  const int k = static_cast<int>(r.u32());
  Mlp mu = r.net();
  Mlp sigma = r.net();
  return GaussianConditional(std::move(mu), std::move(sigma), kind, k);
}

SoftmaxPolicyModel load_softmax_policy(const std::string& path) {
  Reader r = open_kind(path, "softmax_policy");
  const int k = static_cast<int>(r.u32());
  return SoftmaxPolicyModel(r.net(), k);
}

GaussianPolicyModel load_gaussian_policy(const std::string& path) {
  Reader r = open_kind(path, "gaussian_policy");
  const double stddev = r.f64();
  return GaussianPolicyModel(r.net(), stddev);
}

SoftmaxConditional load_softmax_conditional(const std::string& path) {
  Reader r = open_kind(path, "softmax_conditional");
  const ActionKind kind = r.u32() == 0 ? ActionKind::Discrete : ActionKind::Continuous;
  const int k = static_cast<int>(r.u32());
  const int l = static_cast<int>(r.u32());
  return SoftmaxConditional(r.net(), kind, k, l);
}

}  // namespace coppkit
