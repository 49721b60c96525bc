#pragma once
// Bidirectional two-layer LSTM with linear readout, written directly on
// Eigen. Sequences are stored feature-major: a matrix of shape
// (features) x (timesteps * batch), column block t holding the batch at
// step t. Input-side and weight-gradient products then run as single large
// GEMMs; only the recurrence is sequential.
#include <cstring>
#include <fstream>

#include "nmtrack/dataset.hpp"

namespace nmtrack {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// One direction of one layer. Gate rows are stacked [input; forget; cell;
// output], each `hidden` rows.
template <class T>
struct LstmDir {
  MatX<T> W;  // 4H x I
  MatX<T> U;  // 4H x H
  VecX<T> b;  // 4H

  void setup(int in, int hidden) {
    W.setZero(4 * hidden, in);
    U.setZero(4 * hidden, hidden);
    b.setZero(4 * hidden);
  }
  std::int64_t count() const { return W.size() + U.size() + b.size(); }
};

template <class T>
struct BiLayer {
  LstmDir<T> fwd, bwd;
  int in = 0, hidden = 0;

  void setup(int in_, int hidden_) {
    in = in_;
    hidden = hidden_;
    fwd.setup(in, hidden);
    bwd.setup(in, hidden);
  }
  std::int64_t count() const { return fwd.count() + bwd.count(); }
};

template <class T>
struct Readout {
  MatX<T> W;  // O x I
  VecX<T> b;  // O

  void setup(int in, int out) {
    W.setZero(out, in);
    b.setZero(out);
  }
  std::int64_t count() const { return W.size() + b.size(); }
};

template <class T>
struct DirCache {
  MatX<T> gates;   // 4H x TB, activated gate values (dpre during backward)
  MatX<T> c;       // H x TB cell states
  MatX<T> tanh_c;  // H x TB
};

// Forward pass of one direction. `x` is I x TB; the direction's hidden
// sequence is written into `out_h` (H x TB, possibly a row block of the
// concatenated layer output), aligned to original time indices.
template <class T>
void dir_forward(const LstmDir<T>& w, const MatX<T>& x, int steps, int batch,
                 bool reverse, Eigen::Ref<MatX<T>> out_h, DirCache<T>& cache) {
  const int H = int(w.U.cols());
  cache.gates.noalias() = w.W * x;
  cache.gates.colwise() += w.b;
  cache.c.resize(H, steps * batch);
  cache.tanh_c.resize(H, steps * batch);
  MatX<T> h_prev = MatX<T>::Zero(H, batch);
  MatX<T> c_prev = MatX<T>::Zero(H, batch);
  for (int k = 0; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    auto g4 = cache.gates.middleCols(t * batch, batch);
    g4.noalias() += w.U * h_prev;
    auto gi = g4.middleRows(0, H).array();
    auto gf = g4.middleRows(H, H).array();
    auto gg = g4.middleRows(2 * H, H).array();
    auto go = g4.middleRows(3 * H, H).array();
    gi = T(1) / (T(1) + (-gi).exp());
    gf = T(1) / (T(1) + (-gf).exp());
    gg = gg.tanh();
    go = T(1) / (T(1) + (-go).exp());
    auto ct = cache.c.middleCols(t * batch, batch);
    ct.array() = gf * c_prev.array() + gi * gg;
    auto tct = cache.tanh_c.middleCols(t * batch, batch);
    tct.array() = ct.array().tanh();
    out_h.middleCols(t * batch, batch).array() = go * tct.array();
    h_prev = out_h.middleCols(t * batch, batch);
    c_prev = ct;
  }
}

// Reverse-mode pass of one direction. `dout_h` carries the gradient on this
// direction's hidden outputs; gradients are accumulated into `grad` and the
// input gradient `dx`. `cache.gates` is overwritten with pre-activation
// gradients and consumed by the batched weight-gradient products.
template <class T>
void dir_backward(const LstmDir<T>& w, const MatX<T>& x,
                  const Eigen::Ref<const MatX<T>>& out_h,
                  const Eigen::Ref<const MatX<T>>& dout_h, int steps,
                  int batch, bool reverse, DirCache<T>& cache,
                  LstmDir<T>& grad, MatX<T>* dx) {
  const int H = int(w.U.cols());
  MatX<T> dh = MatX<T>::Zero(H, batch);
  MatX<T> dc = MatX<T>::Zero(H, batch);
  MatX<T> dpre(4 * H, batch);
  for (int k = steps - 1; k >= 0; --k) {
    const int t = reverse ? steps - 1 - k : k;
    const int tp = reverse ? steps - k : k - 1;  // forward-order predecessor
    dh += dout_h.middleCols(t * batch, batch);
    auto g4 = cache.gates.middleCols(t * batch, batch);
    auto gi = g4.middleRows(0, H).array();
    auto gf = g4.middleRows(H, H).array();
    auto gg = g4.middleRows(2 * H, H).array();
    auto go = g4.middleRows(3 * H, H).array();
    auto tct = cache.tanh_c.middleCols(t * batch, batch).array();
    auto do_ = (dh.array() * tct).eval();
    dc.array() += dh.array() * go * (T(1) - tct * tct);
    auto di = (dc.array() * gg).eval();
    auto dg = (dc.array() * gi).eval();
    MatX<T> df;
    if (k > 0)
      df = (dc.array() * cache.c.middleCols(tp * batch, batch).array())
               .matrix();
    else
      df = MatX<T>::Zero(H, batch);
    dc.array() *= gf;  // gradient on the previous cell state
    dpre.middleRows(0, H).array() = di * gi * (T(1) - gi);
    dpre.middleRows(H, H).array() = df.array() * gf * (T(1) - gf);
    dpre.middleRows(2 * H, H).array() = dg * (T(1) - gg * gg);
    dpre.middleRows(3 * H, H).array() = do_ * go * (T(1) - go);
    dh.noalias() = w.U.transpose() * dpre;
    g4 = dpre;  // stash for the batched products below
  }
  // batched weight/input gradients over the whole sequence
  grad.W.noalias() += cache.gates * x.transpose();
  grad.b.noalias() += cache.gates.rowwise().sum();
  if (dx) dx->noalias() += w.W.transpose() * cache.gates;
  // pair each step's dpre with the forward-order previous hidden state
  MatX<T> h_prev_stack = MatX<T>::Zero(H, steps * batch);
  for (int k = 1; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    const int tp = reverse ? steps - k : k - 1;
    h_prev_stack.middleCols(t * batch, batch) =
        out_h.middleCols(tp * batch, batch);
  }
  grad.U.noalias() += cache.gates * h_prev_stack.transpose();
}

template <class T>
struct Network {
  BiLayer<T> l1, l2;
  Readout<T> fc;
  int n_in = 1, n_out = n_targets;

  void setup(int in, int h1, int h2, int out) {
    n_in = in;
    n_out = out;
    l1.setup(in, h1);
    l2.setup(2 * h1, h2);
    fc.setup(2 * h2, out);
  }
  std::int64_t count() const {
    return l1.count() + l2.count() + fc.count();
  }
  template <class U>
  Network<U> cast() const {
    Network<U> o;
    o.setup(n_in, l1.hidden, l2.hidden, n_out);
    o.l1.fwd.W = l1.fwd.W.template cast<U>();
    o.l1.fwd.U = l1.fwd.U.template cast<U>();
    o.l1.fwd.b = l1.fwd.b.template cast<U>();
    o.l1.bwd.W = l1.bwd.W.template cast<U>();
    o.l1.bwd.U = l1.bwd.U.template cast<U>();
    o.l1.bwd.b = l1.bwd.b.template cast<U>();
    o.l2.fwd.W = l2.fwd.W.template cast<U>();
    o.l2.fwd.U = l2.fwd.U.template cast<U>();
    o.l2.fwd.b = l2.fwd.b.template cast<U>();
    o.l2.bwd.W = l2.bwd.W.template cast<U>();
    o.l2.bwd.U = l2.bwd.U.template cast<U>();
    o.l2.bwd.b = l2.bwd.b.template cast<U>();
    o.fc.W = fc.W.template cast<U>();
    o.fc.b = fc.b.template cast<U>();
    return o;
  }
};

// Uniform init at 1/sqrt(hidden) per layer (readout at 1/sqrt(fan_in)),
// with the forget-gate bias lifted by one to open the memory path early.
template <class T>
void init_weights(Network<T>& net, std::uint64_t seed) {
  rng r(seed);
  auto fill = [&](auto& m, double s) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = T(r.uniform(-s, s));
  };
  for (BiLayer<T>* layer : {&net.l1, &net.l2}) {
    const double s = 1.0 / std::sqrt(double(layer->hidden));
    for (LstmDir<T>* d : {&layer->fwd, &layer->bwd}) {
      fill(d->W, s);
      fill(d->U, s);
      fill(d->b, s);
      d->b.segment(layer->hidden, layer->hidden).array() += T(1);
    }
  }
  const double s = 1.0 / std::sqrt(double(net.fc.W.cols()));
  fill(net.fc.W, s);
  fill(net.fc.b, s);
}

template <class T>
struct FwdCache {
  MatX<T> l1_out;  // 2H1 x TB
  MatX<T> l2_out;  // 2H2 x TB
  DirCache<T> c1f, c1b, c2f, c2b;
};

// x: n_in x TB -> predictions n_out x TB.
template <class T>
MatX<T> forward(const Network<T>& net, const MatX<T>& x, int steps, int batch,
                FwdCache<T>& cache) {
  const int h1 = net.l1.hidden, h2 = net.l2.hidden;
  cache.l1_out.resize(2 * h1, steps * batch);
  dir_forward<T>(net.l1.fwd, x, steps, batch, false,
                 cache.l1_out.middleRows(0, h1), cache.c1f);
  dir_forward<T>(net.l1.bwd, x, steps, batch, true,
                 cache.l1_out.middleRows(h1, h1), cache.c1b);
  cache.l2_out.resize(2 * h2, steps * batch);
  dir_forward<T>(net.l2.fwd, cache.l1_out, steps, batch, false,
                 cache.l2_out.middleRows(0, h2), cache.c2f);
  dir_forward<T>(net.l2.bwd, cache.l1_out, steps, batch, true,
                 cache.l2_out.middleRows(h2, h2), cache.c2b);
  MatX<T> y = net.fc.W * cache.l2_out;
  y.colwise() += net.fc.b;
  return y;
}

// dy: n_out x TB -> gradients for every block; input gradient is discarded.
template <class T>
void backward(const Network<T>& net, const MatX<T>& x, const MatX<T>& dy,
              int steps, int batch, FwdCache<T>& cache, Network<T>& grad) {
  const int h1 = net.l1.hidden, h2 = net.l2.hidden;
  grad.fc.W.noalias() += dy * cache.l2_out.transpose();
  grad.fc.b.noalias() += dy.rowwise().sum();
  MatX<T> dl2 = net.fc.W.transpose() * dy;
  MatX<T> dl1 = MatX<T>::Zero(2 * h1, steps * batch);
  dir_backward<T>(net.l2.fwd, cache.l1_out, cache.l2_out.middleRows(0, h2),
                  dl2.middleRows(0, h2), steps, batch, false, cache.c2f,
                  grad.l2.fwd, &dl1);
  dir_backward<T>(net.l2.bwd, cache.l1_out, cache.l2_out.middleRows(h2, h2),
                  dl2.middleRows(h2, h2), steps, batch, true, cache.c2b,
                  grad.l2.bwd, &dl1);
  dir_backward<T>(net.l1.fwd, x, cache.l1_out.middleRows(0, h1),
                  dl1.middleRows(0, h1), steps, batch, false, cache.c1f,
                  grad.l1.fwd, nullptr);
  dir_backward<T>(net.l1.bwd, x, cache.l1_out.middleRows(h1, h1),
                  dl1.middleRows(h1, h1), steps, batch, true, cache.c1b,
                  grad.l1.bwd, nullptr);
}

// ---------------------------------------------------------------------------
// Weight-file format: "NMLW" magic, u32 version, u64 header length, JSON
// header (architecture, dtype, window length, target names, standardization
// snapshot, free-form provenance), then raw little-endian float32 blobs in
// fixed block order.

namespace detail {

template <class T, class Fn>
void for_each_block(Network<T>& net, Fn&& fn) {
  fn("l1.fwd.W", net.l1.fwd.W);
  fn("l1.fwd.U", net.l1.fwd.U);
  fn("l1.fwd.b", net.l1.fwd.b);
  fn("l1.bwd.W", net.l1.bwd.W);
  fn("l1.bwd.U", net.l1.bwd.U);
  fn("l1.bwd.b", net.l1.bwd.b);
  fn("l2.fwd.W", net.l2.fwd.W);
  fn("l2.fwd.U", net.l2.fwd.U);
  fn("l2.fwd.b", net.l2.fwd.b);
  fn("l2.bwd.W", net.l2.bwd.W);
  fn("l2.bwd.U", net.l2.bwd.U);
  fn("l2.bwd.b", net.l2.bwd.b);
  fn("fc.W", net.fc.W);
  fn("fc.b", net.fc.b);
}

}  // namespace detail

struct WeightsMeta {
  StandardStats stats;
  json extra;  // training provenance (config echo, epochs, seed)
};

inline void save_weights(const std::string& path, Network<float>& net,
                         const WeightsMeta& meta) {
  json shapes = json::array();
  detail::for_each_block(net, [&](const char* name, auto& m) {
    shapes.push_back(json{{"name", name},
                          {"rows", (std::int64_t)m.rows()},
                          {"cols", (std::int64_t)m.cols()}});
  });
  json head{{"format", "nmtrack-weights"},
            {"dtype", "float32"},
            {"arch",
             {{"in", net.n_in},
              {"h1", net.l1.hidden},
              {"h2", net.l2.hidden},
              {"out", net.n_out}}},
            {"window_len", window_len},
            {"blocks", shapes},
            {"stats", meta.stats.to_json()},
            {"extra", meta.extra}};
  std::string hs = head.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for write: " + path);
  const char magic[4] = {'N', 'M', 'L', 'W'};
  std::uint32_t ver = 1;
  std::uint64_t hlen = hs.size();
  f.write(magic, 4);
  f.write(reinterpret_cast<char*>(&ver), 4);
  f.write(reinterpret_cast<char*>(&hlen), 8);
  f.write(hs.data(), hs.size());
  detail::for_each_block(net, [&](const char*, auto& m) {
    f.write(reinterpret_cast<const char*>(m.data()), sizeof(float) * m.size());
  });
  if (!f) throw io_error("write failed: " + path);
}

inline Network<float> load_weights(const std::string& path,
                                   WeightsMeta* meta = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open: " + path);
  char magic[4];
  std::uint32_t ver;
  std::uint64_t hlen;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&ver), 4);
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || std::memcmp(magic, "NMLW", 4) != 0)
    throw io_error("not a weights file: " + path);
  if (ver != 1) throw io_error("weights version mismatch: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  json head = json::parse(hs);
  if (head.value("dtype", "") != "float32")
    throw io_error("unsupported weights dtype");
  Network<float> net;
  auto arch = head.at("arch");
  net.setup(arch.at("in"), arch.at("h1"), arch.at("h2"), arch.at("out"));
  size_t bi = 0;
  auto blocks = head.at("blocks");
  detail::for_each_block(net, [&](const char* name, auto& m) {
    if (bi >= blocks.size()) throw io_error("weights header missing blocks");
    auto b = blocks[bi++];
    if (b.at("name") != name || b.at("rows") != (std::int64_t)m.rows() ||
        b.at("cols") != (std::int64_t)m.cols())
      throw io_error(std::string("weights block mismatch at ") + name);
    f.read(reinterpret_cast<char*>(m.data()), sizeof(float) * m.size());
  });
  if (!f) throw io_error("truncated weights file: " + path);
  if (meta) {
    meta->stats = StandardStats::from_json(head.at("stats"));
    meta->extra = head.value("extra", json::object());
  }
  return net;
}

}  // namespace nmtrack
