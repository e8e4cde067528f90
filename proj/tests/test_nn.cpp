#include <doctest.h>

#include <cmath>
#include <vector>

#include "lftrack/nn.hpp"
#include "support.hpp"

using namespace lftrack;
using test_support::rand_mat;

namespace {

MatXd eye(Index n) { return MatXd::Identity(n, n); }

// Independent single-head attention oracle: explicit loops, no graph code.
MatXd attention_oracle(const nn::ParamStore<double>& ps, const nn::AttnP& p, const MatXd& x) {
  auto lin = [&](const nn::LinearP& l, const MatXd& in) {
    MatXd out = in * ps.entry(l.w).value;
    out.rowwise() += ps.entry(l.b).value.row(0);
    return out;
  };
  const Index dim = x.cols();
  const Index dk = dim / p.heads;
  MatXd q = lin(p.q, x), k = lin(p.k, x), v = lin(p.v, x);
  MatXd y(x.rows(), dim);
  for (Index h = 0; h < p.heads; ++h) {
    MatXd qh = q.middleCols(h * dk, dk), kh = k.middleCols(h * dk, dk);
    MatXd vh = v.middleCols(h * dk, dk);
    MatXd s = qh * kh.transpose() / std::sqrt(double(dk));
    MatXd w(s.rows(), s.cols());
    for (Index i = 0; i < s.rows(); ++i) {
      double mx = s.row(i).maxCoeff();
      double z = 0;
      for (Index j = 0; j < s.cols(); ++j) {
        w(i, j) = std::exp(s(i, j) - mx);
        z += w(i, j);
      }
      w.row(i) /= z;
    }
    y.middleCols(h * dk, dk) = w * vh;
  }
  return lin(p.o, y);
}

void set_param(nn::ParamStore<double>& ps, Index idx, const MatXd& v) {
  ps.entry(idx).value = v;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("parameter store registry and round trips") {
    nn::ParamStore<double> ps;
    const Index a = ps.add("a", MatXd(MatXd::Ones(2, 3)));
    const Index b = ps.add("b", MatXd(MatXd::Zero(1, 4)));
    CHECK(ps.size() == 2);
    CHECK(ps.find("a") == a);
    CHECK(ps.find("b") == b);
    CHECK(ps.find("missing") == -1);
    CHECK(ps.scalar_count() == 10);
    CHECK_THROWS_AS(ps.add("a", MatXd(MatXd::Zero(1, 1))), ValidationError);

    ps.entry(a).grad.setConstant(3.0);
    ps.zero_grad();
    CHECK(ps.entry(a).grad.isZero(0));

    auto f = ps.cast<float>();
    CHECK(f.size() == 2);
    CHECK(f.entry(0).value(0, 0) == 1.0f);

    auto tensors = ps.to_tensors();
    REQUIRE(tensors.size() == 2);
    nn::ParamStore<double> other;
    other.add("a", MatXd(MatXd::Zero(2, 3)));
    other.add("b", MatXd(MatXd::Ones(1, 4)));
    other.load_tensors(tensors);
    CHECK(other.entry(0).value == ps.entry(0).value);
    CHECK(other.entry(1).value == ps.entry(1).value);

    // count mismatch, unknown name, shape mismatch
    std::vector<TensorEntry> one{tensors[0]};
    CHECK_THROWS_AS(other.load_tensors(one), ValidationError);
    auto bad_name = tensors;
    bad_name[1].name = "zzz";
    CHECK_THROWS_AS(other.load_tensors(bad_name), ValidationError);
    auto bad_shape = tensors;
    bad_shape[1].value = MatXf::Zero(2, 4);
    CHECK_THROWS_AS(other.load_tensors(bad_shape), ValidationError);
  }

  TEST_CASE("param leaves accumulate gradients into the store") {
    nn::ParamStore<double> ps;
    const Index w = ps.add("w", MatXd(MatXd::Constant(2, 2, 1.5)));
    ad::Graph<double> g;
    // use the same parameter twice: d/dw sum(w + w) = 2 everywhere
    auto v1 = nn::param(g, ps, w);
    auto v2 = nn::param(g, ps, w);
    auto loss = ad::sum_all(ad::add(v1, v2));
    ps.zero_grad();
    g.backward(loss.id);
    CHECK(ps.entry(w).grad == MatXd::Constant(2, 2, 2.0));
    CHECK_THROWS_AS(nn::param(g, ps, Index(5)), ValidationError);
  }

  TEST_CASE("linear layer matches the affine oracle") {
    Rng rng(11);
    nn::ParamStore<double> ps;
    auto lp = nn::make_linear(ps, "lin", 3, 2, rng);
    set_param(ps, lp.b, rand_mat<double>(rng, 1, 2));
    MatXd x = rand_mat<double>(rng, 5, 3);
    ad::Graph<double> g;
    auto y = nn::linear(ps, lp, ad::constant(g, x));
    MatXd want = x * ps.entry(lp.w).value;
    want.rowwise() += ps.entry(lp.b).value.row(0);
    CHECK((y.v() - want).norm() <= 1e-12);
  }

  TEST_CASE("truncated normal init stays within two sigma") {
    Rng rng(3);
    MatXd m = nn::trunc_normal_init<double>(rng, 40, 40, 0.02);
    CHECK(m.array().abs().maxCoeff() <= 0.04 + 1e-12);
    CHECK(m.array().abs().maxCoeff() > 0.0);
  }

  TEST_CASE("attention matches an independent oracle across head counts") {
    for (Index heads : {Index(1), Index(2), Index(4)}) {
      Rng rng(100 + uint64_t(heads));
      nn::ParamStore<double> ps;
      auto p = nn::make_attention(ps, "attn", 8, heads, rng);
      for (const char* b : {"attn.q.b", "attn.k.b", "attn.v.b", "attn.o.b"})
        set_param(ps, ps.find(b), rand_mat<double>(rng, 1, 8));
      MatXd x = rand_mat<double>(rng, 6, 8);
      ad::Graph<double> g;
      auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x));
      MatXd want = attention_oracle(ps, p, x);
      CHECK((y.v() - want).norm() <= 1e-12 * std::max(1.0, want.norm()));
    }
    Rng rng(1);
    nn::ParamStore<double> ps;
    CHECK_THROWS_AS(nn::make_attention(ps, "bad", 6, 4, rng), ValidationError);
  }

  TEST_CASE("identical tokens attend uniformly; identity projections pass through") {
    nn::ParamStore<double> ps;
    Rng rng(7);
    auto p = nn::make_attention(ps, "attn", 2, 1, rng);
    set_param(ps, p.q.w, eye(2));
    set_param(ps, p.k.w, eye(2));
    set_param(ps, p.v.w, eye(2));
    set_param(ps, p.o.w, eye(2));
    MatXd x(2, 2);
    x << 0.3, -0.7, 0.3, -0.7;
    ad::Graph<double> g;
    nn::MhaTrace<double> trace;
    auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {}, {}, &trace);
    REQUIRE(trace.weights.size() == 1);
    CHECK(trace.weights[0] == MatXd::Constant(2, 2, 0.5));
    CHECK(y.v() == x);  // 0.5*a + 0.5*a == a and identity maps are exact
  }

  TEST_CASE("joint softmax decomposes into per-frame blocks sharing a denominator") {
    for (Index n : {Index(1), Index(2), Index(4)}) {
      Rng rng(40 + uint64_t(n));
      nn::ParamStore<double> ps;
      auto p = nn::make_attention(ps, "attn", 4, 2, rng);
      MatXd x = rand_mat<double>(rng, 2 * n, 4, -2.0, 2.0);
      ad::Graph<double> g;
      nn::MhaTrace<double> trace;
      auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {}, {}, &trace);
      (void)y;
      REQUIRE(trace.scores.size() == 2);
      for (std::size_t h = 0; h < trace.scores.size(); ++h) {
        auto blocks = test_support::block_assembled_attention(trace.scores[h],
                                                              MatXd(MatXd::Zero(2 * n, 1)), n);
        CHECK((trace.weights[h] - blocks.weights).norm() <=
              1e-12 * std::max(1.0, blocks.weights.norm()));
      }
    }
  }

  TEST_CASE("attention is permutation equivariant") {
    Rng rng(55);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 6, 3, rng);
    MatXd x = rand_mat<double>(rng, 5, 6);
    std::vector<int> perm{3, 0, 4, 1, 2};
    MatXd xp(5, 6);
    for (int i = 0; i < 5; ++i) xp.row(i) = x.row(perm[std::size_t(i)]);
    ad::Graph<double> g;
    auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x));
    auto yp = nn::multi_head_attention(ps, p, ad::constant(g, xp), ad::constant(g, xp));
    for (int i = 0; i < 5; ++i)
      CHECK((yp.v().row(i) - y.v().row(perm[std::size_t(i)])).norm() <= 1e-12);
  }

  TEST_CASE("post-softmax masking zeroes exactly the disallowed weights") {
    Rng rng(8);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 4, 1, rng);
    MatXd x = rand_mat<double>(rng, 4, 4);
    MatXd rel(4, 4);
    rel << 1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1;
    ad::Graph<double> g;
    nn::MhaTrace<double> plain_tr, masked_tr;
    auto plain = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {}, {},
                                          &plain_tr);
    (void)plain;
    nn::AttnMaskSpec<double> mask;
    mask.mode = nn::MaskMode::post_softmax;
    mask.relation = ad::constant(g, rel);
    auto masked = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), mask, {},
                                           &masked_tr);
    (void)masked;
    const MatXd& w0 = plain_tr.weights[0];
    const MatXd& wm = masked_tr.weights[0];
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) {
        if (rel(i, j) == 0.0) {
          CHECK(wm(i, j) == 0.0);
        } else {
          CHECK(wm(i, j) == w0(i, j));  // survivors are NOT renormalized
        }
      }
  }

  TEST_CASE("pre-softmax masking renormalizes over the allowed set") {
    Rng rng(9);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 4, 1, rng);
    MatXd x = rand_mat<double>(rng, 4, 4);
    MatXd rel(4, 4);
    rel << 1, 1, 0, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 0, 1;
    ad::Graph<double> g;
    nn::AttnMaskSpec<double> mask;
    mask.mode = nn::MaskMode::pre_softmax;
    mask.relation = ad::constant(g, rel);
    nn::MhaTrace<double> tr;
    auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), mask, {}, &tr);
    (void)y;
    const MatXd& w = tr.weights[0];
    for (Index i = 0; i < 4; ++i) {
      double row_sum = 0;
      for (Index j = 0; j < 4; ++j) {
        if (rel(i, j) == 0.0) CHECK(w(i, j) == 0.0);
        row_sum += w(i, j);
      }
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("an all-ones relation reproduces unmasked attention bit for bit") {
    for (auto mode : {nn::MaskMode::post_softmax, nn::MaskMode::pre_softmax}) {
      Rng rng(10);
      nn::ParamStore<float> ps;
      auto p = nn::make_attention(ps, "attn", 8, 2, rng);
      MatXf x = rand_mat<float>(rng, 6, 8);
      ad::Graph<float> g;
      nn::MhaTrace<float> tr_plain, tr_masked;
      auto plain = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {}, {},
                                            &tr_plain);
      nn::AttnMaskSpec<float> mask;
      mask.mode = mode;
      mask.relation = ad::constant(g, MatXf(MatXf::Ones(6, 6)));
      auto masked = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), mask,
                                             {}, &tr_masked);
      CHECK(plain.v() == masked.v());
      for (std::size_t h = 0; h < tr_plain.weights.size(); ++h)
        CHECK(tr_plain.weights[h] == tr_masked.weights[h]);
    }
  }

  TEST_CASE("mask spec validation") {
    Rng rng(2);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 4, 1, rng);
    MatXd x = rand_mat<double>(rng, 3, 4);
    ad::Graph<double> g;
    nn::AttnMaskSpec<double> no_rel;
    no_rel.mode = nn::MaskMode::post_softmax;
    CHECK_THROWS_AS(nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), no_rel),
                    ValidationError);
    nn::AttnMaskSpec<double> bad;
    bad.mode = nn::MaskMode::post_softmax;
    bad.relation = ad::constant(g, MatXd(MatXd::Ones(2, 2)));
    CHECK_THROWS_AS(nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), bad),
                    ValidationError);
  }

  TEST_CASE("spatial dropout removes the k largest same-frame weights per row") {
    MatXd w(4, 4);
    w << 0.1, 0.4, 0.3, 0.2,  //
        0.25, 0.25, 0.4, 0.1,  //
        0.5, 0.1, 0.2, 0.2,    //
        0.3, 0.3, 0.2, 0.2;
    nn::SpatialDrop<double> drop;
    drop.enabled = true;
    drop.n_frame = 2;
    drop.p = 0.5;  // k = 1
    MatXd keep = nn::detail::spatial_drop_mask(w, drop);
    // rows 0-1 belong to frame 1 (cols 0-1 same-frame), rows 2-3 to frame 2
    MatXd want = MatXd::Ones(4, 4);
    want(0, 1) = 0;  // max of {0.1, 0.4}
    want(1, 0) = 0;  // tie 0.25/0.25 -> smaller column
    want(2, 2) = 0;  // max of {0.2, 0.2} tie -> smaller column
    want(3, 2) = 0;
    CHECK(keep == want);

    drop.p = 1.0;  // k = n: the whole same-frame block goes
    keep = nn::detail::spatial_drop_mask(w, drop);
    CHECK(keep.block(0, 0, 2, 2).isZero(0));
    CHECK(keep.block(2, 2, 2, 2).isZero(0));
    CHECK(keep.block(0, 2, 2, 2) == MatXd::Ones(2, 2));
    CHECK(keep.block(2, 0, 2, 2) == MatXd::Ones(2, 2));

    drop.p = 0.1;  // k = round(0.2) = 0: nothing dropped
    CHECK(nn::detail::spatial_drop_mask(w, drop) == MatXd::Ones(4, 4));

    nn::SpatialDrop<double> bad = drop;
    bad.p = 2.0;
    CHECK_THROWS_AS(nn::detail::spatial_drop_mask(w, bad), ValidationError);
    CHECK_THROWS_AS(nn::detail::spatial_drop_mask(MatXd(MatXd::Ones(3, 3)), drop), ValidationError);
  }

  TEST_CASE("attention applies spatial dropout to same-frame weights only") {
    Rng rng(21);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 4, 1, rng);
    MatXd x = rand_mat<double>(rng, 6, 4);
    ad::Graph<double> g;
    nn::MhaTrace<double> tr_plain, tr_drop;
    auto plain = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {}, {},
                                          &tr_plain);
    (void)plain;
    nn::SpatialDrop<double> drop;
    drop.enabled = true;
    drop.n_frame = 3;
    drop.p = 1.0;
    auto dropped = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x), {},
                                            drop, &tr_drop);
    (void)dropped;
    const MatXd& w0 = tr_plain.weights[0];
    const MatXd& wd = tr_drop.weights[0];
    for (Index i = 0; i < 6; ++i)
      for (Index j = 0; j < 6; ++j) {
        const bool same = (i < 3) == (j < 3);
        if (same) {
          CHECK(wd(i, j) == 0.0);
        } else {
          CHECK(wd(i, j) == w0(i, j));  // cross-frame weights untouched, no renormalization
        }
      }
  }

  TEST_CASE("encoder layer with zeroed output projections is the identity") {
    Rng rng(31);
    nn::ParamStore<double> ps;
    auto p = nn::make_encoder_layer(ps, "enc", 4, 2, rng);
    set_param(ps, p.attn.o.w, MatXd(MatXd::Zero(4, 4)));
    set_param(ps, p.ffn.fc2.w, MatXd(MatXd::Zero(16, 4)));
    MatXd x = rand_mat<double>(rng, 5, 4);
    for (bool pre : {true, false}) {
      ad::Graph<double> g;
      auto y = nn::encoder_layer(ps, p, ad::constant(g, x), pre);
      CHECK(y.v() == x);
    }
  }

  TEST_CASE("encoder layer side hook adds its output to the block result") {
    Rng rng(32);
    nn::ParamStore<double> ps;
    auto p = nn::make_encoder_layer(ps, "enc", 4, 2, rng);
    MatXd x = rand_mat<double>(rng, 4, 4);
    MatXd bump = rand_mat<double>(rng, 4, 4);
    ad::Graph<double> g;
    auto base = nn::encoder_layer(ps, p, ad::constant(g, x), true);
    std::function<ad::Var<double>(ad::Var<double>)> extra = [&](ad::Var<double> in) {
      return ad::cmul_const(in, bump);
    };
    auto hooked = nn::encoder_layer(ps, p, ad::constant(g, x), true, {}, {}, extra);
    MatXd want = base.v() + (x.array() * bump.array()).matrix();
    CHECK((hooked.v() - want).norm() <= 1e-12);
  }

  TEST_CASE("patch flattening layout and channel replication") {
    MatXd img(4, 4);
    for (Index i = 0; i < 16; ++i) img(i / 4, i % 4) = double(i);
    MatXd toks = nn::patch_tokens<double>({img}, 2);
    REQUIRE(toks.rows() == 4);
    REQUIRE(toks.cols() == 12);
    // patch row-major order: (0,0), (0,1), (1,0), (1,1)
    // within patch (py*P+px)*3+c with all three channels equal
    CHECK(toks(0, 0) == 0.0);   // patch 0, py0 px0
    CHECK(toks(0, 1) == 0.0);   // channel copy
    CHECK(toks(0, 3) == 1.0);   // px 1
    CHECK(toks(0, 6) == 4.0);   // py 1 -> img(1,0)
    CHECK(toks(1, 0) == 2.0);   // second patch starts at column 2
    CHECK(toks(2, 0) == 8.0);   // second patch row
    CHECK(toks(3, 9) == 15.0);  // last pixel of last patch

    MatXd r = img, gch = img, b = img;
    gch.array() += 1;
    b.array() += 2;
    MatXd rgb = nn::patch_tokens<double>({r, gch, b}, 2);
    CHECK(rgb(0, 0) == 0.0);
    CHECK(rgb(0, 1) == 1.0);
    CHECK(rgb(0, 2) == 2.0);

    CHECK_THROWS_AS(nn::patch_tokens<double>({}, 2), ValidationError);
    CHECK_THROWS_AS(nn::patch_tokens<double>({img, img}, 2), ValidationError);
    CHECK_THROWS_AS(nn::patch_tokens<double>({img}, 3), ValidationError);
    MatXd odd(4, 2);
    odd.setZero();
    CHECK_THROWS_AS(nn::patch_tokens<double>({img, odd, img}, 2), ValidationError);
  }

  TEST_CASE("attention gradients reach every projection") {
    Rng rng(77);
    nn::ParamStore<double> ps;
    auto p = nn::make_attention(ps, "attn", 4, 2, rng);
    MatXd x = rand_mat<double>(rng, 4, 4);
    ad::Graph<double> g;
    auto y = nn::multi_head_attention(ps, p, ad::constant(g, x), ad::constant(g, x));
    auto loss = ad::sum_all(ad::cmul(y, y));
    ps.zero_grad();
    g.backward(loss.id);
    for (Index i = 0; i < ps.size(); ++i) {
      // the key bias shifts every logit in a row equally, which the softmax
      // normalization cancels exactly; its true gradient is zero
      if (ps.entry(i).name == "attn.k.b") continue;
      CHECK(ps.entry(i).grad.norm() > 0.0);
    }
  }
}
