#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pws/dataset.hpp"
#include "pws/extraction.hpp"
#include "pws/prompts.hpp"
#include "pws/vlm_gateway.hpp"

namespace pws {

/// Label spellings used by the baseline prompts.
inline std::string_view baseline_label_name(Label l) {
  switch (l) {
    case Label::Homophobic: return "Homophobia";
    case Label::Transphobic: return "Transphobia";
    case Label::NonAntiLGBT: return "Non_Anti_LGBT";
  }
  return "Non_Anti_LGBT";
}

inline std::string baseline_label_name(int id) {
  if (id >= 0 && id < kNumLabels) return std::string(baseline_label_name(static_cast<Label>(id)));
  return "Unparseable";
}

/// Matches one of the three prompt labels, ignoring case and treating
/// underscores, hyphens and runs of spaces alike.
inline std::optional<Label> parse_baseline_label(std::string_view raw) {
  std::string key;
  for (char c : to_lower_ascii(clean_answer(raw))) {
    if (c == '_' || c == '-' || is_space(c)) {
      if (!key.empty() && key.back() != ' ') key.push_back(' ');
    } else {
      key.push_back(c);
    }
  }
  while (!key.empty() && key.back() == ' ') key.pop_back();
  if (key == "homophobia") return Label::Homophobic;
  if (key == "transphobia") return Label::Transphobic;
  if (key == "non anti lgbt") return Label::NonAntiLGBT;
  return std::nullopt;
}

/// Text of the first well-formed <output>...</output> pair: the innermost
/// opening tag before the first closing tag.
inline std::optional<std::string_view> extract_output_tag(std::string_view raw) {
  static constexpr std::string_view kOpen = "<output>";
  static constexpr std::string_view kClose = "</output>";
  const auto close = raw.find(kClose);
  if (close == std::string_view::npos) return std::nullopt;
  const auto open = raw.substr(0, close).rfind(kOpen);
  if (open == std::string_view::npos) return std::nullopt;
  return raw.substr(open + kOpen.size(), close - open - kOpen.size());
}

inline std::optional<Label> parse_baseline_output(std::string_view raw, BaselineMode mode) {
  if (mode == BaselineMode::Direct) return parse_baseline_label(raw);
  const auto inner = extract_output_tag(raw);
  if (!inner) return std::nullopt;
  return parse_baseline_label(*inner);
}

struct BaselinePrediction {
  std::string meme_id;
  BaselineMode mode = BaselineMode::Direct;
  std::optional<Label> label;  // nullopt = Unparseable
  std::string raw;
  int attempts = 0;

  int label_id() const { return label ? static_cast<int>(*label) : kNoLabel; }
};

/// Answers the mock backend may give for a baseline request.
inline std::vector<std::string> baseline_answer_hints(BaselineMode mode) {
  std::vector<std::string> hints;
  for (int i = 0; i < kNumLabels; ++i) {
    const std::string name = baseline_label_name(i);
    hints.push_back(mode == BaselineMode::Direct ? name : "<reason>mock</reason><output>" + name + "</output>");
  }
  return hints;
}

inline BaselinePrediction classify(const MemeRecord& meme, std::shared_ptr<const ImagePayload> image, Gateway& gateway,
                                   BaselineMode mode) {
  BaselinePrediction p;
  p.meme_id = meme.meme_id;
  p.mode = mode;
  const auto hints = baseline_answer_hints(mode);
  for (int attempt = 1; attempt <= kMaxAnswerAttempts; ++attempt) {
    VlmRequest req;
    req.system_prompt = baseline_system_prompt(mode);
    req.image = image;
    req.temperature = temperature_for_attempt(attempt);
    req.max_output_tokens = mode == BaselineMode::Direct ? kAnswerMaxTokens : kReasoningMaxTokens;
    req.model_id = gateway.model_id();
    req.attempt = attempt;
    req.answer_hints = hints;
    p.raw = gateway.ask(std::move(req)).text;
    p.attempts = attempt;
    if ((p.label = parse_baseline_output(p.raw, mode))) return p;
  }
  return p;
}

inline BaselinePrediction classify_direct(const MemeRecord& meme, Gateway& gateway) {
  return classify(meme, load_image(meme.image_ref), gateway, BaselineMode::Direct);
}

inline BaselinePrediction classify_reasoning(const MemeRecord& meme, Gateway& gateway) {
  return classify(meme, load_image(meme.image_ref), gateway, BaselineMode::Reasoning);
}

inline std::string predictions_csv(const std::vector<BaselinePrediction>& preds) {
  std::string out = "meme_id,mode,label,attempts\n";
  for (const auto& p : preds) {
    out += csv_row({p.meme_id, std::string(to_string(p.mode)), baseline_label_name(p.label_id()),
                    std::to_string(p.attempts)});
  }
  return out;
}

}  // namespace pws
