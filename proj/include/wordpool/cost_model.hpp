#pragma once

// Closed-form training and generation cost model, attention-density counts,
// and reconciliation against audited generation runs.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpool/error.hpp"
#include "wordpool/generation.hpp"

namespace wordpool {

enum class CostKind { kBase, kSubword, kE2e };

inline std::string to_string(CostKind k) {
  switch (k) {
    case CostKind::kBase: return "base";
    case CostKind::kSubword: return "subword";
    case CostKind::kE2e: return "e2e";
  }
  return "?";
}

inline CostKind parse_cost_kind(std::string_view s) {
  if (s == "base") return CostKind::kBase;
  if (s == "subword") return CostKind::kSubword;
  if (s == "e2e") return CostKind::kE2e;
  throw ConfigError("unknown cost kind: " + std::string(s));
}

/// M is in activation entries, so it only ever appears in ratios.
struct CostModelParams {
  double memory = 1e9;  // M
  double layers = 8;    // L
  double dim = 512;     // D
  double context = 192; // T, characters
  double corpus = 1e9;  // N, characters
  double chars_per_word = 5.5;    // c
  double chars_per_subword = 2.8; // s
  double latency = 1.0;           // t, one full-depth forward pass

  void validate() const {
    for (double v : {memory, layers, dim, context, corpus, latency}) {
      if (!(v > 0) || !std::isfinite(v)) throw ConfigError("cost model: parameters must be finite and > 0");
    }
    if (!(chars_per_word > 1)) throw ConfigError("cost model: c must be > 1");
    if (!(chars_per_subword >= 1)) throw ConfigError("cost model: s must be >= 1");
  }
};

/// Characters per word for the English, French and Russian corpora.
inline double language_chars_per_word(std::string_view lang) {
  if (lang == "en") return 5.5;
  if (lang == "fr") return 5.2;
  if (lang == "ru") return 6.4;
  throw ConfigError("unknown language preset: " + std::string(lang) + " (en, fr, ru)");
}

inline CostModelParams preset_params(std::string_view lang) {
  CostModelParams p;
  p.chars_per_word = language_chars_per_word(lang);
  return p;
}

/// Attention memory per sequence, divided by L*D*T.
inline double attention_factor(CostKind k, const CostModelParams& p) {
  p.validate();
  const double t = p.context, c = p.chars_per_word, s = p.chars_per_subword;
  switch (k) {
    case CostKind::kBase: return t;
    case CostKind::kSubword: return t / (s * s);
    case CostKind::kE2e: return c / 2 + t / (c * c);
  }
  throw ConfigError("unknown cost kind");
}

inline double optimal_batch(CostKind k, const CostModelParams& p) {
  return p.memory / (p.layers * p.dim * p.context * attention_factor(k, p));
}

/// Optimizer steps for one pass over the corpus.
inline double training_steps(CostKind k, const CostModelParams& p) {
  return p.corpus / (optimal_batch(k, p) * p.context);
}

inline double training_speedup(CostKind k, const CostModelParams& p) {
  return training_steps(CostKind::kBase, p) / training_steps(k, p);
}

/// Headline end-to-end training speed-up at c = 5.5, T = 192.
inline constexpr double kHeadlineE2eSpeedup = 6.8;

// --- generation --------------------------------------------------------------------------

/// Layer fractions behind the end-to-end generation estimate: the word encoder
/// and per-word decoder are a quarter of the depth, the word-level core is the
/// full depth, and Step 3 of one word overlaps Steps 1-2 of the next.
struct GenerationDerivation {
  double chars_per_word = 5.5;
  double encoder_frac = 0.25;
  double core_frac = 1.0;
  double decoder_frac = 0.25;

  /// c characters every max(encoder + core, c * decoder) latency units.
  double steady_state_speed() const {
    return chars_per_word / std::max(encoder_frac + core_frac, chars_per_word * decoder_frac);
  }
};

/// Characters generated per latency unit t: base 1/t, subword s/t, e2e 4/t.
inline double generation_speed(CostKind k, const CostModelParams& p) {
  p.validate();
  switch (k) {
    case CostKind::kBase: return 1.0 / p.latency;
    case CostKind::kSubword: return p.chars_per_subword / p.latency;
    case CostKind::kE2e: return 4.0 / p.latency;
  }
  throw ConfigError("unknown cost kind");
}

// --- attention density -----------------------------------------------------------------------

enum class DensityMode { kFlatCausal, kIntraWord };

struct AttentionDensity {
  double total_entries = 0;  // flat causal T(T+1)/2, or full bidirectional T^2
  double intra_entries = 0;  // entries inside one word's block
  double intra_fraction() const { return intra_entries / total_entries; }
  double cross_fraction() const { return 1.0 - intra_fraction(); }
};

/// Expected counts for T characters split into words of c characters.
/// flat_causal: causal blocks of c per word inside a causal T x T map.
/// intra_word: bidirectional blocks of c + n_cls per word against T^2.
inline AttentionDensity attention_density(double t, double c, std::size_t n_cls, DensityMode mode) {
  if (!(c >= 1) || !(t >= c)) throw ConfigError("attention density: need T >= c >= 1");
  const double words = t / c;
  AttentionDensity d;
  if (mode == DensityMode::kFlatCausal) {
    d.total_entries = t * (t + 1) / 2;
    d.intra_entries = words * c * (c + 1) / 2;
  } else {
    const double w = c + static_cast<double>(n_cls);
    d.total_entries = t * t;
    d.intra_entries = words * w * w;
  }
  return d;
}

/// Exact counts for given integer word lengths.
inline AttentionDensity attention_density(std::span<const std::size_t> lens, std::size_t n_cls, DensityMode mode) {
  AttentionDensity d;
  double t = 0;
  for (auto l : lens) {
    t += static_cast<double>(l);
    const double w = static_cast<double>(l + (mode == DensityMode::kIntraWord ? n_cls : 0));
    d.intra_entries += mode == DensityMode::kFlatCausal ? w * (w + 1) / 2 : w * w;
  }
  d.total_entries = mode == DensityMode::kFlatCausal ? t * (t + 1) / 2 : t * t;
  return d;
}

// --- report -------------------------------------------------------------------------------------

struct CostRow {
  std::string kind;
  double batch = 0;
  double steps = 0;
  double training_speedup = 0;
  double generation_speed = 0;
};

struct CostReport {
  CostModelParams params;
  std::vector<CostRow> rows;
  GenerationDerivation derivation;
  AttentionDensity flat_causal;
  AttentionDensity intra_word;
  std::size_t n_cls = 4;
  std::vector<std::string> notes;

  nlohmann::json to_json() const {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& row : rows) {
      r.push_back({{"kind", row.kind},
                   {"optimal_batch", row.batch},
                   {"training_steps", row.steps},
                   {"training_speedup", row.training_speedup},
                   {"generation_speed", row.generation_speed}});
    }
    return {{"params",
             {{"M", params.memory},
              {"L", params.layers},
              {"D", params.dim},
              {"T", params.context},
              {"N", params.corpus},
              {"c", params.chars_per_word},
              {"s", params.chars_per_subword},
              {"t", params.latency}}},
            {"rows", r},
            {"generation_derivation",
             {{"c", derivation.chars_per_word},
              {"encoder_frac", derivation.encoder_frac},
              {"core_frac", derivation.core_frac},
              {"decoder_frac", derivation.decoder_frac},
              {"steady_state_speed", derivation.steady_state_speed()}}},
            {"attention_density",
             {{"flat_causal_cross", flat_causal.cross_fraction()},
              {"flat_causal_intra_entries", flat_causal.intra_entries},
              {"flat_causal_total_entries", flat_causal.total_entries},
              {"intra_word_fraction", intra_word.intra_fraction()},
              {"n_cls", n_cls}}},
            {"notes", notes}};
  }

  std::string to_table() const {
    std::ostringstream out;
    out << std::fixed;
    out << "c=" << std::setprecision(2) << params.chars_per_word << " s=" << params.chars_per_subword
        << " T=" << std::setprecision(0) << params.context << " L=" << params.layers << " D=" << params.dim << "\n";
    out << std::left << std::setw(10) << "kind" << std::right << std::setw(14) << "batch" << std::setw(16) << "steps"
        << std::setw(12) << "speed-up" << std::setw(14) << "gen chars/t" << "\n";
    for (const auto& r : rows) {
      out << std::left << std::setw(10) << r.kind << std::right << std::setprecision(2) << std::setw(14) << r.batch
          << std::setprecision(0) << std::setw(16) << r.steps << std::setprecision(2) << std::setw(12)
          << r.training_speedup << std::setw(14) << r.generation_speed << "\n";
    }
    out << std::setprecision(3) << "steady-state e2e estimate: " << derivation.steady_state_speed() << " chars/t\n";
    out << "cross-word share of causal attention: " << flat_causal.cross_fraction() << "\n";
    out << "intra-word share with " << n_cls << " CLS: " << intra_word.intra_fraction() << "\n";
    for (const auto& n : notes) out << "note: " << n << "\n";
    return out.str();
  }
};

inline CostReport cost_report(const CostModelParams& p, std::size_t n_cls = 4) {
  p.validate();
  CostReport r;
  r.params = p;
  r.n_cls = n_cls;
  for (CostKind k : {CostKind::kBase, CostKind::kSubword, CostKind::kE2e}) {
    r.rows.push_back({to_string(k), optimal_batch(k, p), training_steps(k, p), training_speedup(k, p),
                      generation_speed(k, p)});
  }
  r.derivation.chars_per_word = p.chars_per_word;
  r.flat_causal = attention_density(p.context, p.chars_per_word, 0, DensityMode::kFlatCausal);
  r.intra_word = attention_density(p.context, p.chars_per_word, n_cls, DensityMode::kIntraWord);
  std::ostringstream note;
  note << std::fixed << std::setprecision(1) << "e2e training speed-up: formula T/(c/2+T/c^2) gives "
       << training_speedup(CostKind::kE2e, p) << "x here (21.1x at c=5.5, T=192); the headline figure is "
       << kHeadlineE2eSpeedup << "x. The formula value is reported; the two are not reconciled.";
  r.notes.push_back(note.str());
  r.notes.push_back("e2e generation speed 4/t is the headline constant; steady_state_speed recomputes it from c");
  return r;
}

// --- reconciliation with audited runs --------------------------------------------------------------

struct ReconcileRow {
  std::string kind;
  double analytic = 0;
  double measured = 0;
  double rel_dev = 0;
};

/// Characters per latency unit from audited runs, one row per audit. A flat
/// pass or a core pass of `layers` layers is one unit; hierarchical runs are
/// measured on the dependency-respecting path and on the overlapped schedule.
inline std::vector<ReconcileRow> reconcile(const std::vector<GenerationAudit>& audits, const CostModelParams& p) {
  std::vector<ReconcileRow> out;
  for (const auto& a : audits) {
    if (a.layers == 0) throw ConfigError("reconcile: audit has no layer count");
    const double units = (a.mode == "pipelined" ? a.overlap_depth_layers : a.depth_layers) / static_cast<double>(a.layers);
    ReconcileRow r;
    r.kind = a.mode;
    r.measured = units > 0 ? static_cast<double>(a.chars) / units : 0.0;
    r.analytic = a.mode == "flat" ? generation_speed(CostKind::kBase, p) : generation_speed(CostKind::kE2e, p);
    r.rel_dev = (r.measured - r.analytic) / r.analytic;
    out.push_back(r);
  }
  return out;
}

inline std::string reconcile_table(const std::vector<ReconcileRow>& rows) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(12) << "mode" << std::right << std::setw(12) << "analytic" << std::setw(12) << "measured"
      << std::setw(12) << "rel.dev" << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.kind << std::right << std::setw(12) << r.analytic << std::setw(12)
        << r.measured << std::setw(12) << r.rel_dev << "\n";
  }
  return out.str();
}

}  // namespace wordpool
