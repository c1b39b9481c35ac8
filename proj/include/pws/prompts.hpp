#pragma once

#include <string>
#include <string_view>

namespace pws {

enum class BaselineMode { Direct, Reasoning };

inline std::string_view to_string(BaselineMode m) { return m == BaselineMode::Direct ? "direct" : "reasoning"; }

/// System prompt sent with every labeling-function question.
inline const std::string& feature_system_prompt() {
  static const std::string prompt =
      "You are a labeling system.\n"
      "You will be shown a meme image and then asked a single question about it.\n"
      "Rules:\n"
      "- Do NOT explain your reasoning.\n"
      "- Do NOT add extra words, punctuation, or commentary.\n"
      "- Output only the answer.\n"
      "- Be concise and deterministic.\n"
      "- If unsure, choose the closest valid answer.\n"
      "- The meme may contain English, Hindi, or Chinese text.\n"
      "- Focus on meaning rather than language.\n"
      "- Watch for sarcasm or parody.\n"
      "- If the meme criticizes hateful views, do NOT mark it as hateful.\n"
      "- Never include explanations.\n"
      "- Never include multiple answers.";
  return prompt;
}

/// System prompts for direct classification of a meme into one of the three labels.
inline const std::string& baseline_system_prompt(BaselineMode mode) {
  static const std::string direct =
      "You are a labeling system.\n"
      "You will be shown a meme image.\n"
      "\n"
      "Your task is to classify the meme into exactly one of the following categories:\n"
      "- Homophobia\n"
      "- Transphobia\n"
      "- Non_Anti_LGBT\n"
      "\n"
      "Rules:\n"
      "- Do NOT explain your reasoning.\n"
      "- Do NOT add extra words, punctuation, or commentary.\n"
      "- Output only one of the three labels exactly as written.\n"
      "- Be concise and deterministic.\n"
      "- If unsure, choose the closest valid label.\n"
      "- The meme may contain English, Hindi, or Chinese text.\n"
      "- Focus on meaning rather than language.\n"
      "- Watch for sarcasm, irony, or parody.\n"
      "- If the meme criticizes or mocks homophobia or transphobia, classify it as Non_Anti_LGBT.\n"
      "- The label should reflect the target and intent of the meme, not just keywords.\n"
      "- Never include explanations.\n"
      "- Never include multiple labels.";
  static const std::string reasoning =
      "You are a labeling system.\n"
      "You will be shown a meme image.\n"
      "\n"
      "Your task is to classify the meme into exactly one of the following categories:\n"
      "- Homophobia\n"
      "- Transphobia\n"
      "- Non_Anti_LGBT\n"
      "\n"
      "Instructions:\n"
      "- Carefully analyze the meme step by step.\n"
      "- Consider text, visuals, context, sarcasm, irony, and intent.\n"
      "- Explicitly explain your reasoning before giving the final label.\n"
      "\n"
      "Rules:\n"
      "- The meme may contain English, Hindi, or Chinese text.\n"
      "- Focus on meaning rather than language.\n"
      "- Watch for sarcasm, irony, or parody.\n"
      "- If the meme criticizes or mocks homophobia or transphobia, classify it as Non_Anti_LGBT.\n"
      "- The label should reflect the target and intent of the meme, not just keywords.\n"
      "- If unsure, choose the closest valid label.\n"
      "\n"
      "Output format (strictly follow this format):\n"
      "<reason>\n"
      "Your step-by-step reasoning here.\n"
      "</reason>\n"
      "<output>\n"
      "One label only: Homophobia, Transphobia, or Non_Anti_LGBT\n"
      "</output>\n"
      "\n"
      "- Do NOT put the label outside the <output> tags.\n"
      "- Do NOT include anything outside these tags.\n"
      "- Do NOT include multiple labels.\n"
      "- Ensure the final answer appears only inside <output> tags.";
  return mode == BaselineMode::Direct ? direct : reasoning;
}

}  // namespace pws
