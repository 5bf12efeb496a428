#include "mefa/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <ostream>
#include <set>

#include "mefa/cmr/cmr.hpp"
#include "mefa/dcc/dcc.hpp"
#include "mefa/errors.hpp"
#include "mefa/harness/evaluate.hpp"
#include "mefa/harness/lamb.hpp"
#include "mefa/imr/losses.hpp"
#include "mefa/imr/mining.hpp"
#include "mefa/numerics/ops.hpp"

namespace mefa::harness {

using namespace num;

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  itc += o.itc;
  imr_t += o.imr_t;
  imc_t += o.imc_t;
  imr_v += o.imr_v;
  imc_v += o.imc_v;
  nitc += o.nitc;
  ditc += o.ditc;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double f) const {
  LossBreakdown r = *this;
  for (double* v : {&r.itc, &r.imr_t, &r.imc_t, &r.imr_v, &r.imc_v, &r.nitc, &r.ditc, &r.total}) *v *= f;
  return r;
}

TrainContext::TrainContext(const Dataset& train)
    : data(&train),
      lexicon(imr::Lexicon::from_captions(train.captions)),
      stats(imr::CorpusStats::from_captions(train.captions)) {}

void TrainContext::refresh_visual_negatives(const Model& model, std::size_t k) {
  const auto bank = encode_image_bank(model, data->images);
  visual_negatives.assign(bank.size(), {});
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& item = bank[i];
    visual_negatives[i] = imr::mine_visual_negatives(item.global_feat, item.identity_id, bank, k).indices;
  }
}

namespace {

struct Triples {
  Tensor<float> anchors, positives, negatives;  // expanded per negative
  std::vector<std::size_t> owners;              // anchor rows that own at least one negative
  std::vector<std::size_t> offsets;             // segment offsets of negatives per owner
};

// Expands per-anchor negatives into aligned triple matrices.
Triples make_triples(const Tensor<float>& anchors, const Tensor<float>& positives, const Tensor<float>& negatives,
                     const std::vector<std::size_t>& owner_of_negative) {
  Triples t;
  t.offsets.push_back(0);
  for (std::size_t r = 0; r < owner_of_negative.size(); ++r) {
    if (t.owners.empty() || t.owners.back() != owner_of_negative[r]) {
      if (!t.owners.empty()) t.offsets.push_back(r);
      t.owners.push_back(owner_of_negative[r]);
    }
  }
  t.offsets.push_back(owner_of_negative.size());
  t.anchors = gather_rows(anchors, owner_of_negative);
  t.positives = gather_rows(positives, owner_of_negative);
  t.negatives = negatives;
  return t;
}

struct PairLosses {
  Tensor<float> imr, imc;
};

PairLosses hinge_and_contrast(const Tensor<float>& anchors, const Tensor<float>& positives,
                              const Tensor<float>& negatives, const std::vector<std::size_t>& owner_of_negative,
                              const imr::ImrLossParams& params) {
  const auto t = make_triples(anchors, positives, negatives, owner_of_negative);
  PairLosses out;
  out.imr = imr::loss_imr_batch(t.anchors, t.positives, t.negatives, params);
  out.imc = imr::loss_imc(gather_rows(anchors, t.owners), gather_rows(positives, t.owners), negatives,
                          std::span<const std::size_t>(t.offsets), params);
  return out;
}

void accumulate(Tensor<float>& total, const Tensor<float>& term, double weight) {
  const auto weighted = scale(term, static_cast<float>(weight));
  total = total.defined() ? add(total, weighted) : weighted;
}

}  // namespace

BatchLoss batch_loss(const Model& model, const TrainConfig& config, const TrainContext& context,
                     std::span<const std::size_t> caption_indices, std::uint64_t negative_seed) {
  const Dataset& data = *context.data;
  const Toggles& on = config.toggles;
  const std::size_t n = caption_indices.size();
  std::vector<Caption> captions;
  std::vector<ImageGrid> images;
  std::vector<std::size_t> image_indices;
  for (std::size_t c : caption_indices) {
    const auto& cap = data.captions.at(c);
    if (!cap.image_index) throw InputError("caption " + std::to_string(c) + " has no image_index");
    captions.push_back(cap);
    image_indices.push_back(*cap.image_index);
    images.push_back(data.images.at(*cap.image_index));
  }
  const auto enc_i = model.image.encode(images);
  const auto enc_t = model.text.encode(captions, model.vocab);
  const auto& ids = enc_i.identity_ids;

  BatchLoss out;
  Tensor<float> total;
  if (on.base_itc) {
    const auto l = cmr::loss_nitc(enc_i.globals, enc_t.globals, ids, static_cast<float>(config.tau_itc));
    out.parts.itc = l.item();
    accumulate(total, l, config.lambda_itc);
  }
  if (on.imr_t) {
    // Image anchor, caption positive, perturbed captions as negatives: one per tier slot.
    std::vector<Caption> negatives;
    std::vector<std::size_t> owners;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Caption> mine;
      const std::uint64_t pair_seed = mix_seed(negative_seed, caption_indices[i]);
      for (int tier = 1; tier <= 3; ++tier) {
        const auto neg = imr::perturb_with_fallback(captions[i], static_cast<imr::Tier>(tier), context.lexicon,
                                                    context.stats, mix_seed(pair_seed, tier));
        if (neg && std::find(mine.begin(), mine.end(), neg->caption) == mine.end()) mine.push_back(neg->caption);
      }
      if (mine.empty()) ++out.skipped_captions;
      for (auto& c : mine) {
        negatives.push_back(std::move(c));
        owners.push_back(i);
      }
    }
    out.text_negatives = negatives.size();
    if (!negatives.empty()) {
      const auto enc_n = model.text.encode(negatives, model.vocab);
      const auto l = hinge_and_contrast(enc_i.globals, enc_t.globals, enc_n.globals, owners, config.imr);
      out.parts.imr_t = l.imr.item();
      out.parts.imc_t = l.imc.item();
      accumulate(total, l.imr, config.lambda_imr);
      accumulate(total, l.imc, config.lambda_imc);
    }
  }
  if (on.imr_v) {
    // Caption anchor, image positive, mined look-alike images as negatives.
    if (context.visual_negatives.size() != data.images.size()) {
      throw InputError("visual negatives not mined for this epoch");
    }
    // Anchors often share look-alikes: encode each distinct image once.
    std::vector<ImageGrid> negatives;
    std::map<std::size_t, std::size_t> row_of;
    std::vector<std::size_t> owners, rows;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g : context.visual_negatives[image_indices[i]]) {
        const auto [it, fresh] = row_of.try_emplace(g, negatives.size());
        if (fresh) negatives.push_back(data.images[g]);
        rows.push_back(it->second);
        owners.push_back(i);
      }
    }
    if (!negatives.empty()) {
      const auto enc_n = model.image.encode(negatives);
      const auto l = hinge_and_contrast(enc_t.globals, enc_i.globals, gather_rows(enc_n.globals, rows), owners,
                                        config.imr);
      out.parts.imr_v = l.imr.item();
      out.parts.imc_v = l.imc.item();
      accumulate(total, l.imr, config.lambda_imr);
      accumulate(total, l.imc, config.lambda_imc);
    }
  }
  if (on.cmr) {
    std::vector<Tensor<float>> g_img, g_txt;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r =
          cmr::refine_pair(enc_i.locals_of(i), enc_i.global_of(i), enc_t.locals_of(i), enc_t.global_of(i), model.head);
      g_img.push_back(reshape(r.g_img, {1, r.g_img.size()}));
      g_txt.push_back(reshape(r.g_txt, {1, r.g_txt.size()}));
    }
    const auto l = cmr::loss_nitc(concat_rows(g_img), concat_rows(g_txt), ids, static_cast<float>(config.cmr.tau_n));
    out.parts.nitc = l.item();
    accumulate(total, l, config.lambda_nitc);
  }
  if (on.dcc) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      const auto profile = dcc::word_relevance_profile(enc_t.locals_of(i), enc_i.locals_of(i));
      const auto sel = dcc::select_cue_words(profile, config.dcc);
      std::vector<std::size_t> rows;
      for (std::size_t w : sel.word_indices) rows.push_back(enc_t.offsets[i] + w);
      groups.push_back(std::move(rows));
    }
    const auto cues = dcc::pool_groups(enc_t.locals, groups);
    const auto pooled = dcc::pool_segments(enc_i.locals, std::span<const std::size_t>(enc_i.offsets));
    const auto l = dcc::loss_ditc(cues, pooled, static_cast<float>(config.dcc.tau));
    out.parts.ditc = l.item();
    accumulate(total, l, config.lambda_ditc);
  }
  out.total = total.defined() ? total : Tensor<float>::scalar(0.0f);
  out.parts.total = out.total.item();
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed) {
  std::vector<std::size_t> order(data.captions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw_index(rng, i)]);

  // Per identity, its pairs in shuffled order.
  std::vector<std::deque<std::size_t>> queues;
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t c : order) {
    const auto [it, fresh] = slot.try_emplace(data.captions[c].identity_id, queues.size());
    if (fresh) queues.emplace_back();
    queues[it->second].push_back(c);
  }
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> rank(queues.size());
  for (std::size_t left = order.size(); left > 0;) {
    // Identities with the most pairs left go first so the tail stays diverse;
    // ties are reshuffled per batch so groupings do not repeat.
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    for (std::size_t i = rank.size(); i > 1; --i) std::swap(rank[i - 1], rank[draw_index(rng, i)]);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return queues[a].size() > queues[b].size(); });
    std::vector<std::size_t> batch;
    for (std::size_t q : rank) {
      if (batch.size() == batch_size || queues[q].empty()) break;
      batch.push_back(queues[q].front());
      queues[q].pop_front();
    }
    left -= batch.size();
    batches.push_back(std::move(batch));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

SplitData split_dataset(const Dataset& data, const TrainConfig& config) {
  SplitData s;
  s.ids = split_identities(data.identities.size(), config.val_fraction, config.test_fraction, config.seed);
  s.train = subset(data, s.ids.train);
  s.val = subset(data, s.ids.val);
  s.test = subset(data, s.ids.test);
  return s;
}

Json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"loss",
           {{"total", r.loss.total},
            {"itc", r.loss.itc},
            {"imr_t", r.loss.imr_t},
            {"imc_t", r.loss.imc_t},
            {"imr_v", r.loss.imr_v},
            {"imc_v", r.loss.imc_v},
            {"nitc", r.loss.nitc},
            {"ditc", r.loss.ditc}}},
          {"val_rank1", r.val_rank1},
          {"text_negatives", r.text_negatives},
          {"skipped_captions", r.skipped_captions}};
}

Model build_model(const TrainConfig& config, const Dataset& train) {
  return Model(config.encoder, config.cmr, Vocabulary::from_captions(train.captions), config.seed);
}

TrainResult train(Model& model, const TrainConfig& config, const Dataset& train_data, const Dataset* val,
                  std::ostream* log) {
  config.validate();
  if (train_data.captions.empty() || train_data.images.empty()) throw InputError("training set is empty");

  std::vector<std::vector<std::vector<std::size_t>>> schedule;
  std::size_t total_steps = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    schedule.push_back(make_batches(train_data, config.batch_size, mix_seed(config.seed, 0x100 + e)));
    total_steps += schedule.back().size();
  }

  TrainContext context(train_data);
  auto params = model.parameter_tensors();
  LambState state{config.lamb, {}, {}, 0};
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    if (config.toggles.imr_v) context.refresh_visual_negatives(model, config.visual_k);
    EpochRecord record;
    record.epoch = e + 1;
    const std::uint64_t epoch_seed = mix_seed(config.seed, 0x10000 + e);
    for (std::size_t b = 0; b < schedule[e].size(); ++b, ++step) {
      const auto& batch = schedule[e][b];
      const auto where = "epoch " + std::to_string(e + 1) + " step " + std::to_string(step + 1);
      Tape<float> tape;
      BatchLoss loss;
      {
        TapeScope<float> scope(tape);
        loss = batch_loss(model, config, context, batch, epoch_seed);
      }
      if (!std::isfinite(loss.parts.total)) throw DivergenceError("non-finite loss at " + where);
      record.loss += loss.parts;
      record.text_negatives += loss.text_negatives;
      record.skipped_captions += loss.skipped_captions;
      if (!config.toggles.any()) continue;
      for (auto& p : params) p.zero_grad();
      tape.backward(loss.total);
      try {
        lamb_step(params, state, lr_schedule(step, total_steps, config.lr_start, config.lr_end));
      } catch (const DivergenceError& err) {
        throw DivergenceError(std::string(err.what()) + " at " + where);
      }
    }
    record.loss = record.loss.scaled(1.0 / static_cast<double>(schedule[e].size()));
    if (val && !val->captions.empty()) record.val_rank1 = evaluate_model(model, *val).rank1;
    if (log) {
      *log << "epoch " << record.epoch << " loss " << record.loss.total << " (itc " << record.loss.itc << " imr_t "
           << record.loss.imr_t << " imc_t " << record.loss.imc_t << " imr_v " << record.loss.imr_v << " imc_v "
           << record.loss.imc_v << " nitc " << record.loss.nitc << " ditc " << record.loss.ditc << ")";
      if (val) *log << " val_rank1 " << record.val_rank1;
      *log << '\n';
    }
    result.history.push_back(record);
  }
  for (auto& p : params) p.zero_grad();
  result.steps = step;
  return result;
}

}  // namespace mefa::harness
