#include "tplprog/transformer.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <limits>

#include "tplprog/errors.hpp"
#include "tplprog/util.hpp"

namespace tplprog {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

constexpr int kMaxMembers = 16;
constexpr double kLnEps = 1e-5;
constexpr char kMagic[8] = {'T', 'P', 'L', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::string name;
  int rows, cols;
  std::size_t offset;
};

struct LayerIdx {
  int ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, w1, b1, w2, b2;
};

struct NetIdx {
  int tok, pos_prog, pos_tgt, seg, wvis, bvis, pos_vis, member;
  std::vector<LayerIdx> layers;
  int lnfg, lnfb, wout, bout;
  int prog_cap, tgt_cap;
};

double gelu(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double geluGrad(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat layerNorm(const Mat& x, const RowVec& g, const RowVec& b, LnCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Mat y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  if (cache) cache->xhat = std::move(xhat), cache->rstd = std::move(rstd);
  return y;
}

// Accumulates dg, db; returns dx.
Mat layerNormBack(const Mat& dy, const LnCache& c, const RowVec& g, Eigen::Ref<RowVec> dg, Eigen::Ref<RowVec> db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * g.array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

struct LayerCache {
  Mat x_in, a, q, k, v, ctx, x_mid, b, z1, h;
  LnCache ln1, ln2;
  std::vector<Mat> p;
};

}  // namespace

struct TransformerModel::Impl {
  std::vector<Tensor> tensors;
  std::array<NetIdx, 3> nets;
  int vocab = 0;
  int width = 0, heads = 0, ff = 0;

  int add(const std::string& name, int rows, int cols) {
    const std::size_t off = tensors.empty() ? 0 : tensors.back().offset + static_cast<std::size_t>(tensors.back().rows * tensors.back().cols);
    tensors.push_back({name, rows, cols, off});
    return static_cast<int>(tensors.size()) - 1;
  }
  std::size_t total() const { return tensors.empty() ? 0 : tensors.back().offset + static_cast<std::size_t>(tensors.back().rows * tensors.back().cols); }

  CMapM W(const double* p, int i) const {
    const auto& t = tensors[static_cast<std::size_t>(i)];
    return CMapM(p + t.offset, t.rows, t.cols);
  }
  MapM G(double* p, int i) const {
    const auto& t = tensors[static_cast<std::size_t>(i)];
    return MapM(p + t.offset, t.rows, t.cols);
  }
  RowVec R(const double* p, int i) const { return W(p, i).row(0); }

  Impl(const Grammar& g, const ModelConfig& cfg) : vocab(g.vocabSize()), width(cfg.width), heads(cfg.heads), ff(cfg.ff) {
    const auto& caps = g.caps();
    const int prog_caps[3] = {0, caps.template_len, caps.program_len};
    const int tgt_caps[3] = {caps.template_len, caps.expansion_len, caps.param_len};
    const char* names[3] = {"template", "expansion", "param"};
    const int d = width;
    for (int r = 0; r < 3; ++r) {
      const std::string p = std::string(names[r]) + ".";
      NetIdx& n = nets[static_cast<std::size_t>(r)];
      n.prog_cap = prog_caps[r];
      n.tgt_cap = tgt_caps[r];
      n.tok = add(p + "tok", vocab, d);
      n.pos_prog = add(p + "pos_prog", std::max(1, n.prog_cap), d);
      n.pos_tgt = add(p + "pos_tgt", n.tgt_cap, d);
      n.seg = add(p + "seg", 3, d);
      n.wvis = add(p + "w_vis", kPatchFeatures, d);
      n.bvis = add(p + "b_vis", 1, d);
      n.pos_vis = add(p + "pos_vis", kVisualTokens, d);
      n.member = add(p + "member", kMaxMembers, d);
      for (int l = 0; l < cfg.layers; ++l) {
        const std::string q = p + "l" + std::to_string(l) + ".";
        LayerIdx li{};
        li.ln1g = add(q + "ln1.g", 1, d);
        li.ln1b = add(q + "ln1.b", 1, d);
        li.wq = add(q + "wq", d, d);
        li.bq = add(q + "bq", 1, d);
        li.wk = add(q + "wk", d, d);
        li.bk = add(q + "bk", 1, d);
        li.wv = add(q + "wv", d, d);
        li.bv = add(q + "bv", 1, d);
        li.wo = add(q + "wo", d, d);
        li.bo = add(q + "bo", 1, d);
        li.ln2g = add(q + "ln2.g", 1, d);
        li.ln2b = add(q + "ln2.b", 1, d);
        li.w1 = add(q + "w1", d, ff);
        li.b1 = add(q + "b1", 1, ff);
        li.w2 = add(q + "w2", ff, d);
        li.b2 = add(q + "b2", 1, d);
        n.layers.push_back(li);
      }
      n.lnfg = add(p + "lnf.g", 1, d);
      n.lnfb = add(p + "lnf.b", 1, d);
      n.wout = add(p + "wout", d, vocab);
      n.bout = add(p + "bout", 1, vocab);
    }
  }

  void init(std::vector<double>& params, const ModelConfig& cfg) const {
    params.assign(total(), 0.0);
    Rng rng(cfg.seed ^ 0x5eedf00dULL);
    const double resid = 1.0 / std::sqrt(2.0 * cfg.layers);
    for (const auto& t : tensors) {
      const std::string& n = t.name;
      double* p = params.data() + t.offset;
      const std::size_t count = static_cast<std::size_t>(t.rows * t.cols);
      const auto ends = [&](const char* s) { return n.size() >= std::strlen(s) && n.compare(n.size() - std::strlen(s), std::strlen(s), s) == 0; };
      if (ends(".g")) {
        std::fill(p, p + count, 1.0);
      } else if (ends(".b") || ends("bq") || ends("bk") || ends("bv") || ends("bo") || ends("b1") || ends("b2") || ends("bout") || ends("b_vis")) {
        // zero
      } else if (ends("wout")) {
        for (std::size_t i = 0; i < count; ++i) p[i] = 0.02 * rng.normal();
      } else if (ends("wq") || ends("wk") || ends("wv") || ends("w1") || ends("w_vis")) {
        const double s = 1.0 / std::sqrt(static_cast<double>(t.rows));
        for (std::size_t i = 0; i < count; ++i) p[i] = s * rng.normal();
      } else if (ends("wo") || ends("w2")) {
        const double s = resid / std::sqrt(static_cast<double>(t.rows));
        for (std::size_t i = 0; i < count; ++i) p[i] = s * rng.normal();
      } else {
        for (std::size_t i = 0; i < count; ++i) p[i] = 0.1 * rng.normal();
      }
    }
  }

  // Prefix embeddings for a conditioning, plus the visual inputs used (for
  // the backward pass).
  Mat embedPrefix(const double* P, const NetIdx& n, const Conditioning& c, VisualMode mode) const {
    const int members = static_cast<int>(c.visuals.size());
    for (const auto& f : c.visuals)
      if (f.size() != static_cast<std::size_t>(kVisualTokens * kPatchFeatures)) throw DataError("visual features have the wrong size");
    if (static_cast<int>(c.program.size()) > n.prog_cap) throw LengthOverflow("conditioning program exceeds its cap");
    const int lv = mode == VisualMode::FewShot ? (members > 0 ? kVisualTokens : 0) : members * kVisualTokens;
    if (mode != VisualMode::FewShot && members > kMaxMembers) throw LengthOverflow("too many conditioning canvases");
    const int lp = lv + static_cast<int>(c.program.size());
    Mat x(lp, width);
    const CMapM wvis = W(P, n.wvis);
    const RowVec bvis = R(P, n.bvis);
    const CMapM posv = W(P, n.pos_vis), mem = W(P, n.member), seg = W(P, n.seg), tok = W(P, n.tok), posp = W(P, n.pos_prog);
    if (mode == VisualMode::FewShot) {
      for (int p = 0; p < lv; ++p) {
        RowVec acc = RowVec::Zero(width);
        for (int m = 0; m < members; ++m)
          acc += Eigen::Map<const RowVec>(c.visuals[static_cast<std::size_t>(m)].data() + p * kPatchFeatures, kPatchFeatures) * wvis;
        x.row(p) = acc / members + bvis + posv.row(p) + seg.row(0);
      }
    } else {
      for (int m = 0; m < members; ++m)
        for (int p = 0; p < kVisualTokens; ++p) {
          RowVec row = bvis + posv.row(p) + mem.row(m) + seg.row(0);
          if (mode == VisualMode::Inference)
            row += Eigen::Map<const RowVec>(c.visuals[static_cast<std::size_t>(m)].data() + p * kPatchFeatures, kPatchFeatures) * wvis;
          x.row(m * kVisualTokens + p) = row;
        }
    }
    for (std::size_t j = 0; j < c.program.size(); ++j) {
      const int id = gidOf(c.program[j]);
      x.row(lv + static_cast<int>(j)) = tok.row(id) + posp.row(static_cast<int>(j)) + seg.row(1);
    }
    return x;
  }

  void embedPrefixBack(double* Gp, const NetIdx& n, const Conditioning& c, VisualMode mode, const Mat& dx) const {
    const int members = static_cast<int>(c.visuals.size());
    const int lv = mode == VisualMode::FewShot ? (members > 0 ? kVisualTokens : 0) : members * kVisualTokens;
    MapM dwvis = G(Gp, n.wvis), dbvis = G(Gp, n.bvis), dposv = G(Gp, n.pos_vis), dmem = G(Gp, n.member), dseg = G(Gp, n.seg),
         dtok = G(Gp, n.tok), dposp = G(Gp, n.pos_prog);
    if (mode == VisualMode::FewShot) {
      for (int p = 0; p < lv; ++p) {
        const RowVec g = dx.row(p);
        for (int m = 0; m < members; ++m)
          dwvis += Eigen::Map<const RowVec>(c.visuals[static_cast<std::size_t>(m)].data() + p * kPatchFeatures, kPatchFeatures).transpose() * g / members;
        dbvis.row(0) += g;
        dposv.row(p) += g;
        dseg.row(0) += g;
      }
    } else {
      for (int m = 0; m < members; ++m)
        for (int p = 0; p < kVisualTokens; ++p) {
          const RowVec g = dx.row(m * kVisualTokens + p);
          if (mode == VisualMode::Inference)
            dwvis += Eigen::Map<const RowVec>(c.visuals[static_cast<std::size_t>(m)].data() + p * kPatchFeatures, kPatchFeatures).transpose() * g;
          dbvis.row(0) += g;
          dposv.row(p) += g;
          dmem.row(m) += g;
          dseg.row(0) += g;
        }
    }
    for (std::size_t j = 0; j < c.program.size(); ++j) {
      const RowVec g = dx.row(lv + static_cast<int>(j));
      dtok.row(gidOf(c.program[j])) += g;
      dposp.row(static_cast<int>(j)) += g;
      dseg.row(1) += g;
    }
  }

  // Token ids are looked up through the grammar; set by the owning model.
  const Grammar* grammar = nullptr;
  int gidOf(const Token& t) const { return grammar->tokenId(t); }

  // Runs the layers over `x` (prefix rows first). Rows >= lp are causal targets.
  Mat layersForward(const double* P, const NetIdx& n, Mat x, int lp, std::vector<LayerCache>* caches) const {
    const int L = static_cast<int>(x.rows());
    const int dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& li : n.layers) {
      LayerCache c;
      if (caches) c.x_in = x;
      Mat a = layerNorm(x, R(P, li.ln1g), R(P, li.ln1b), &c.ln1);
      Mat q = (a * W(P, li.wq)).rowwise() + R(P, li.bq);
      Mat k = (a * W(P, li.wk)).rowwise() + R(P, li.bk);
      Mat v = (a * W(P, li.wv)).rowwise() + R(P, li.bv);
      Mat ctx(L, width);
      for (int h = 0; h < heads; ++h) {
        Mat s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
        for (int i = 0; i < L; ++i) {
          double mx = -std::numeric_limits<double>::infinity();
          for (int j = 0; j < L; ++j) {
            if (j >= lp && (i < lp || j > i)) s(i, j) = -std::numeric_limits<double>::infinity();
            mx = std::max(mx, s(i, j));
          }
          double z = 0;
          for (int j = 0; j < L; ++j) {
            s(i, j) = std::exp(s(i, j) - mx);
            z += s(i, j);
          }
          s.row(i) /= z;
        }
        ctx.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
        if (caches) c.p.push_back(std::move(s));
      }
      x += (ctx * W(P, li.wo)).rowwise() + R(P, li.bo);
      if (caches) c.x_mid = x;
      Mat b = layerNorm(x, R(P, li.ln2g), R(P, li.ln2b), &c.ln2);
      Mat z1 = (b * W(P, li.w1)).rowwise() + R(P, li.b1);
      Mat hh = z1.unaryExpr([](double t) { return gelu(t); });
      x += (hh * W(P, li.w2)).rowwise() + R(P, li.b2);
      if (caches) {
        c.a = std::move(a), c.q = std::move(q), c.k = std::move(k), c.v = std::move(v), c.ctx = std::move(ctx);
        c.b = std::move(b), c.z1 = std::move(z1), c.h = std::move(hh);
        caches->push_back(std::move(c));
      }
    }
    return x;
  }

  Mat layersBackward(const double* P, double* Gp, const NetIdx& n, Mat dx, std::vector<LayerCache>& caches) const {
    const int dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = static_cast<int>(n.layers.size()) - 1; l >= 0; --l) {
      const LayerIdx& li = n.layers[static_cast<std::size_t>(l)];
      LayerCache& c = caches[static_cast<std::size_t>(l)];
      // MLP
      G(Gp, li.w2) += c.h.transpose() * dx;
      G(Gp, li.b2).row(0) += dx.colwise().sum();
      Mat dz = (dx * W(P, li.w2).transpose()).array() * c.z1.unaryExpr([](double t) { return geluGrad(t); }).array();
      G(Gp, li.w1) += c.b.transpose() * dz;
      G(Gp, li.b1).row(0) += dz.colwise().sum();
      Mat db = dz * W(P, li.w1).transpose();
      {
        MapM dg = G(Gp, li.ln2g), dbb = G(Gp, li.ln2b);
        RowVec g2 = RowVec::Zero(width), b2 = RowVec::Zero(width);
        dx += layerNormBack(db, c.ln2, R(P, li.ln2g), g2, b2);
        dg.row(0) += g2;
        dbb.row(0) += b2;
      }
      // Attention
      G(Gp, li.wo) += c.ctx.transpose() * dx;
      G(Gp, li.bo).row(0) += dx.colwise().sum();
      Mat dctx = dx * W(P, li.wo).transpose();
      Mat dq(dx.rows(), width), dk(dx.rows(), width), dv(dx.rows(), width);
      for (int h = 0; h < heads; ++h) {
        const Mat& p = c.p[static_cast<std::size_t>(h)];
        const Mat dch = dctx.middleCols(h * dh, dh);
        Mat dp = dch * c.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = p.transpose() * dch;
        Mat ds = p.array() * (dp.colwise() - (p.array() * dp.array()).rowwise().sum().matrix()).array();
        dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh) * scale;
        dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh) * scale;
      }
      G(Gp, li.wq) += c.a.transpose() * dq;
      G(Gp, li.bq).row(0) += dq.colwise().sum();
      G(Gp, li.wk) += c.a.transpose() * dk;
      G(Gp, li.bk).row(0) += dk.colwise().sum();
      G(Gp, li.wv) += c.a.transpose() * dv;
      G(Gp, li.bv).row(0) += dv.colwise().sum();
      Mat da = dq * W(P, li.wq).transpose() + dk * W(P, li.wk).transpose() + dv * W(P, li.wv).transpose();
      {
        MapM dg = G(Gp, li.ln1g), dbb = G(Gp, li.ln1b);
        RowVec g1 = RowVec::Zero(width), b1 = RowVec::Zero(width);
        dx += layerNormBack(da, c.ln1, R(P, li.ln1g), g1, b1);
        dg.row(0) += g1;
        dbb.row(0) += b1;
      }
    }
    return dx;
  }

  // Summed cross-entropy of one example; accumulates gradients when Gp is set.
  double example(const double* P, double* Gp, const TrainingExample& ex, VisualMode mode, int& ntok) const {
    const NetIdx& n = nets[static_cast<std::size_t>(ex.role)];
    ntok = 0;
    if (ex.target.size() < 2) return 0.0;
    if (static_cast<int>(ex.target.size()) > n.tgt_cap) throw LengthOverflow("target sequence exceeds its cap");
    const Conditioning c = conditioningOf(ex);
    const Mat prefix = embedPrefix(P, n, c, mode);
    const int lp = static_cast<int>(prefix.rows());
    const int lt = static_cast<int>(ex.target.size()) - 1;
    Mat x(lp + lt, width);
    x.topRows(lp) = prefix;
    const CMapM tok = W(P, n.tok), post = W(P, n.pos_tgt), seg = W(P, n.seg);
    for (int i = 0; i < lt; ++i) x.row(lp + i) = tok.row(gidOf(ex.target[static_cast<std::size_t>(i)])) + post.row(i) + seg.row(2);
    std::vector<LayerCache> caches;
    Mat h = layersForward(P, n, std::move(x), lp, Gp ? &caches : nullptr);
    LnCache lnf;
    const Mat y = layerNorm(h.bottomRows(lt), R(P, n.lnfg), R(P, n.lnfb), &lnf);
    Mat logits = (y * W(P, n.wout)).rowwise() + R(P, n.bout);
    double total = 0;
    for (int i = 0; i < lt; ++i) {
      const int target = gidOf(ex.target[static_cast<std::size_t>(i + 1)]);
      const double mx = logits.row(i).maxCoeff();
      RowVec e = (logits.row(i).array() - mx).exp();
      const double z = e.sum();
      total += std::log(z) + mx - logits(i, target);
      if (Gp) {
        e /= z;
        e(target) -= 1.0;
        logits.row(i) = e;
      }
    }
    ntok = lt;
    if (!Gp) return total;
    // logits now holds dL/dlogits.
    G(Gp, n.wout) += y.transpose() * logits;
    G(Gp, n.bout).row(0) += logits.colwise().sum();
    const Mat dy = logits * W(P, n.wout).transpose();
    Mat dh = Mat::Zero(h.rows(), width);
    {
      RowVec g = RowVec::Zero(width), b = RowVec::Zero(width);
      dh.bottomRows(lt) = layerNormBack(dy, lnf, R(P, n.lnfg), g, b);
      G(Gp, n.lnfg).row(0) += g;
      G(Gp, n.lnfb).row(0) += b;
    }
    const Mat dx = layersBackward(P, Gp, n, std::move(dh), caches);
    embedPrefixBack(Gp, n, c, mode, dx.topRows(lp));
    MapM dtok = G(Gp, n.tok), dpost = G(Gp, n.pos_tgt), dseg = G(Gp, n.seg);
    for (int i = 0; i < lt; ++i) {
      const RowVec g = dx.row(lp + i);
      dtok.row(gidOf(ex.target[static_cast<std::size_t>(i)])) += g;
      dpost.row(i) += g;
      dseg.row(2) += g;
    }
    return total;
  }
};

// ---- Incremental decoding ---------------------------------------------------------

namespace {

struct PrefixCache {
  std::vector<Mat> k, v;  // per layer, prefix rows
};

struct StepKV {
  std::shared_ptr<const StepKV> parent;
  int pos = 0;
  std::vector<RowVec> k, v;  // per layer
};

class TransformerSession final : public ProposalSession {
 public:
  TransformerSession(const TransformerModel::Impl& impl, const double* P, const NetIdx& net, const Conditioning& c, VisualMode mode)
      : impl_(&impl), P_(P), net_(&net) {
    const Mat x = impl.embedPrefix(P, net, c, mode);
    auto pc = std::make_shared<PrefixCache>();
    if (x.rows() > 0) {
      std::vector<LayerCache> caches;
      impl.layersForward(P, net, x, static_cast<int>(x.rows()), &caches);
      for (auto& lc : caches) {
        pc->k.push_back(std::move(lc.k));
        pc->v.push_back(std::move(lc.v));
      }
    } else {
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        pc->k.emplace_back(0, impl.width);
        pc->v.emplace_back(0, impl.width);
      }
    }
    prefix_ = std::move(pc);
    advance(Token::start());
  }

  void scores(const Cursor&, std::vector<double>& out) override { out.assign(logits_.data(), logits_.data() + logits_.size()); }

  void advance(const Token& t) override {
    const auto& impl = *impl_;
    const NetIdx& n = *net_;
    const double* P = P_;
    const int pos = last_ ? last_->pos + 1 : 0;
    if (pos >= n.tgt_cap) throw LengthOverflow("decoded sequence exceeds its cap");
    std::vector<const StepKV*> chain;
    for (const StepKV* s = last_.get(); s; s = s->parent.get()) chain.push_back(s);
    std::reverse(chain.begin(), chain.end());
    const int d = impl.width, H = impl.heads, dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RowVec x = impl.W(P, n.tok).row(impl.gidOf(t)) + impl.W(P, n.pos_tgt).row(pos) + impl.W(P, n.seg).row(2);
    auto step = std::make_shared<StepKV>();
    step->parent = last_;
    step->pos = pos;
    for (std::size_t l = 0; l < n.layers.size(); ++l) {
      const LayerIdx& li = n.layers[l];
      const RowVec a = layerNorm(x, impl.R(P, li.ln1g), impl.R(P, li.ln1b), nullptr);
      const RowVec q = a * impl.W(P, li.wq) + impl.R(P, li.bq);
      const RowVec k = a * impl.W(P, li.wk) + impl.R(P, li.bk);
      const RowVec v = a * impl.W(P, li.wv) + impl.R(P, li.bv);
      const Mat& pk = prefix_->k[l];
      const Mat& pv = prefix_->v[l];
      const int lp = static_cast<int>(pk.rows());
      const int lt = static_cast<int>(chain.size());
      RowVec ctx(d);
      Eigen::VectorXd s(lp + lt + 1);
      for (int h = 0; h < H; ++h) {
        const auto qh = q.segment(h * dh, dh);
        if (lp) s.head(lp) = pk.middleCols(h * dh, dh) * qh.transpose();
        for (int j = 0; j < lt; ++j) s(lp + j) = chain[static_cast<std::size_t>(j)]->k[l].segment(h * dh, dh).dot(qh);
        s(lp + lt) = k.segment(h * dh, dh).dot(qh);
        s *= scale;
        const double mx = s.maxCoeff();
        s = (s.array() - mx).exp();
        s /= s.sum();
        RowVec acc = RowVec::Zero(dh);
        if (lp) acc += s.head(lp).transpose() * pv.middleCols(h * dh, dh);
        for (int j = 0; j < lt; ++j) acc += s(lp + j) * chain[static_cast<std::size_t>(j)]->v[l].segment(h * dh, dh);
        acc += s(lp + lt) * v.segment(h * dh, dh);
        ctx.segment(h * dh, dh) = acc;
      }
      x += ctx * impl.W(P, li.wo) + impl.R(P, li.bo);
      const RowVec b = layerNorm(x, impl.R(P, li.ln2g), impl.R(P, li.ln2b), nullptr);
      const RowVec hh = (b * impl.W(P, li.w1) + impl.R(P, li.b1)).unaryExpr([](double z) { return gelu(z); });
      x += hh * impl.W(P, li.w2) + impl.R(P, li.b2);
      step->k.push_back(k);
      step->v.push_back(v);
    }
    const RowVec y = layerNorm(x, impl.R(P, n.lnfg), impl.R(P, n.lnfb), nullptr);
    logits_ = y * impl.W(P, n.wout) + impl.R(P, n.bout);
    last_ = std::move(step);
  }

  std::unique_ptr<ProposalSession> clone() const override { return std::make_unique<TransformerSession>(*this); }

 private:
  const TransformerModel::Impl* impl_;
  const double* P_;
  const NetIdx* net_;
  std::shared_ptr<const PrefixCache> prefix_;
  std::shared_ptr<const StepKV> last_;
  RowVec logits_;
};

void putU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void putStr(std::string& out, const std::string& s) {
  putU32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}
void putDoubles(std::string& out, const std::vector<double>& v) {
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

struct Reader {
  const std::string& s;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > s.size()) throw DataError("checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string r = s.substr(pos, n);
    pos += n;
    return r;
  }
  void doubles(std::vector<double>& v) {
    need(v.size() * 8);
    for (double& d : v) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + static_cast<std::size_t>(i)])) << (8 * i);
      std::memcpy(&d, &bits, 8);
      pos += 8;
    }
  }
};

}  // namespace

// ---- Config ------------------------------------------------------------------------

ModelConfig ModelConfig::named(std::string_view name) {
  ModelConfig c;
  if (name == "tiny") {
    c.layers = 1, c.heads = 2, c.width = 32, c.ff = 64;
  } else if (name == "desk") {
  } else if (name == "full") {
    c.layers = 8, c.heads = 16, c.width = 256, c.ff = 1024;
  } else {
    throw DataError("unknown model config '" + std::string(name) + "'");
  }
  return c;
}

nlohmann::json ModelConfig::toJson() const {
  return {{"layers", layers}, {"heads", heads}, {"width", width}, {"ff", ff},   {"lr", lr},
          {"beta1", beta1},   {"beta2", beta2}, {"eps", eps},     {"clip", clip}, {"seed", seed}};
}

ModelConfig ModelConfig::fromJson(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("preset")) c = named(j.at("preset").get<std::string>());
  for (const auto& [k, v] : j.items()) {
    if (k == "preset") continue;
    if (k == "layers") c.layers = v.get<int>();
    else if (k == "heads") c.heads = v.get<int>();
    else if (k == "width") c.width = v.get<int>();
    else if (k == "ff") c.ff = v.get<int>();
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "eps") c.eps = v.get<double>();
    else if (k == "clip") c.clip = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw DataError("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || width < 1 || ff < 1) throw DataError("model dimensions must be positive");
  if (width % heads != 0) throw DataError("width must be divisible by heads");
  if (!(lr > 0)) throw DataError("learning rate must be positive");
}

// ---- Model --------------------------------------------------------------------------

Conditioning conditioningOf(const TrainingExample& ex) { return {ex.role, ex.visuals, ex.program}; }

TransformerModel::TransformerModel(const Domain& d, ModelConfig cfg, VisualMode mode) : domain_(&d), cfg_(cfg), mode_(mode) {
  cfg_.validate();
  impl_ = std::make_unique<Impl>(d.grammar(), cfg_);
  impl_->grammar = &d.grammar();
  impl_->init(params_, cfg_);
  m_.assign(params_.size(), 0.0);
  v_.assign(params_.size(), 0.0);
}

TransformerModel::TransformerModel(const TransformerModel& o)
    : domain_(o.domain_), cfg_(o.cfg_), mode_(o.mode_), steps_(o.steps_), params_(o.params_), m_(o.m_), v_(o.v_),
      impl_(std::make_unique<Impl>(*o.impl_)) {}

TransformerModel& TransformerModel::operator=(const TransformerModel& o) {
  if (this != &o) {
    domain_ = o.domain_;
    cfg_ = o.cfg_;
    mode_ = o.mode_;
    steps_ = o.steps_;
    params_ = o.params_;
    m_ = o.m_;
    v_ = o.v_;
    impl_ = std::make_unique<Impl>(*o.impl_);
  }
  return *this;
}

TransformerModel::~TransformerModel() = default;

std::unique_ptr<ProposalSession> TransformerModel::start(const Conditioning& c) const {
  return std::make_unique<TransformerSession>(*impl_, params_.data(), impl_->nets[static_cast<std::size_t>(c.role)], c, mode_);
}

double TransformerModel::lossAndGrad(const std::vector<TrainingExample>& batch, std::vector<double>& grad, int* tokens) const {
  grad.resize(params_.size(), 0.0);
  double total = 0;
  int ntok = 0;
  for (const auto& ex : batch) {
    int n = 0;
    total += impl_->example(params_.data(), grad.data(), ex, mode_, n);
    ntok += n;
  }
  if (tokens) *tokens = ntok;
  return total;
}

double TransformerModel::loss(const std::vector<TrainingExample>& batch) const {
  double total = 0;
  int ntok = 0;
  for (const auto& ex : batch) {
    int n = 0;
    total += impl_->example(params_.data(), nullptr, ex, mode_, n);
    ntok += n;
  }
  return ntok ? total / ntok : 0.0;
}

double TransformerModel::trainStep(const std::vector<TrainingExample>& batch) {
  std::vector<double> grad(params_.size(), 0.0);
  int ntok = 0;
  const double total = lossAndGrad(batch, grad, &ntok);
  if (ntok == 0) return 0.0;
  double norm = 0;
  for (double& g : grad) {
    g /= ntok;
    norm += g * g;
  }
  norm = std::sqrt(norm);
  const double clip = cfg_.clip > 0 && norm > cfg_.clip ? cfg_.clip / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, steps_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, steps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double g = grad[i] * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g * g;
    params_[i] -= cfg_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
  }
  return total / ntok;
}

std::uint64_t TransformerModel::paramHash() const {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(params_.data()), params_.size() * sizeof(double)));
}

TransformerModel TransformerModel::generativeCopy() const {
  TransformerModel g(*this);
  g.mode_ = VisualMode::Generative;
  g.steps_ = 0;
  std::fill(g.m_.begin(), g.m_.end(), 0.0);
  std::fill(g.v_.begin(), g.v_.end(), 0.0);
  return g;
}

void TransformerModel::save(const std::string& path) const {
  std::string out(kMagic, kMagic + 8);
  putU32(out, kVersion);
  putStr(out, domain_->id());
  nlohmann::json meta = cfg_.toJson();
  meta["mode"] = visualModeName(mode_);
  meta["steps"] = steps_;
  putStr(out, meta.dump());
  putU32(out, static_cast<std::uint32_t>(impl_->tensors.size()));
  for (const auto& t : impl_->tensors) {
    putStr(out, t.name);
    putU32(out, static_cast<std::uint32_t>(t.rows));
    putU32(out, static_cast<std::uint32_t>(t.cols));
  }
  putDoubles(out, params_);
  putDoubles(out, m_);
  putDoubles(out, v_);
  writeFile(path, out);
}

TransformerModel TransformerModel::load(const Domain& d, const std::string& path) {
  const std::string data = readFile(path);
  Reader r{data};
  r.need(8);
  if (data.compare(0, 8, std::string(kMagic, kMagic + 8)) != 0) throw DataError(path + ": not a model checkpoint");
  r.pos = 8;
  if (r.u32() != kVersion) throw DataError(path + ": unsupported checkpoint version");
  const std::string dom = r.str();
  if (dom != d.id()) throw DataError(path + ": checkpoint is for domain '" + dom + "', expected '" + d.id() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }
  const std::string mode = meta.at("mode").get<std::string>();
  const int steps = meta.at("steps").get<int>();
  meta.erase("mode");
  meta.erase("steps");
  TransformerModel m(d, ModelConfig::fromJson(meta));
  m.mode_ = mode == "generative" ? VisualMode::Generative : mode == "few-shot" ? VisualMode::FewShot : VisualMode::Inference;
  m.steps_ = steps;
  const std::uint32_t nt = r.u32();
  if (nt != m.impl_->tensors.size()) throw DataError(path + ": tensor table does not match the configuration");
  for (const auto& t : m.impl_->tensors) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (name != t.name || static_cast<int>(rows) != t.rows || static_cast<int>(cols) != t.cols)
      throw DataError(path + ": tensor " + name + " does not match the configuration");
  }
  r.doubles(m.params_);
  r.doubles(m.m_);
  r.doubles(m.v_);
  if (r.pos != data.size()) throw DataError(path + ": trailing bytes in checkpoint");
  return m;
}

}  // namespace tplprog
