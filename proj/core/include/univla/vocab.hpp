#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace univla {

/// Token modality. Every ID in a vocabulary belongs to exactly one.
enum class Modality { special, text, vision, action };

/// Control tokens with fixed IDs 0..6, in this order.
enum class Special : int {
    bos = 0, // sequence start
    eos = 1, // sequence end
    pad = 2, // padding
    boi = 3, // begin image block
    eoi = 4, // end image block
    boa = 5, // begin action block
    eoa = 6, // end action block
};

constexpr int kNumSpecials = 7;

struct IdRange {
    int begin = 0;
    int end = 0; // one past the last ID
    int size() const { return end - begin; }
    bool contains(int id) const { return id >= begin && id < end; }
};

/// A single flat token-ID space shared by text, vision, and action tokens.
/// Layout is fixed: specials occupy [0,7), then text, then vision, and the
/// action range occupies the final IDs. Construction is deterministic: equal
/// sizes always produce the identical mapping.
class Vocabulary {
  public:
    Vocabulary() = default;

    /// Builds a vocabulary from the three modality sizes. Sizes must be
    /// positive. Text surfaces, if given, must match text_size.
    static Vocabulary build(int text_size, int vision_size, int action_size,
                            std::vector<std::string> text_surfaces = {});

    int total_size() const { return total_; }
    IdRange text_range() const { return text_; }
    IdRange vision_range() const { return vision_; }
    IdRange action_range() const { return action_; }

    int special(Special s) const { return static_cast<int>(s); }

    /// Maps an ID to its modality. Out-of-range IDs raise InvalidArgument.
    Modality classify(int id) const;

    // Offset-to-ID and ID-to-offset, with range checks.
    int text_id(int index) const;
    int vision_id(int index) const;
    int action_id(int index) const;
    int text_index(int id) const;
    int vision_index(int id) const;
    int action_index(int id) const;

    /// Human-readable surface of any ID (word, "<bos>", "v12", "a3", ...).
    std::string surface(int id) const;
    const std::vector<std::string>& text_surfaces() const { return surfaces_; }

    /// Text manifest, one line per ID: "id<TAB>tag<TAB>surface".
    void save_manifest(std::ostream& os) const;
    static Vocabulary load_manifest(std::istream& is);

    bool operator==(const Vocabulary& other) const;

  private:
    IdRange text_{}, vision_{}, action_{};
    int total_ = 0;
    std::vector<std::string> surfaces_; // per text index
};

/// Whitespace word tokenizer over a vocabulary's text surfaces.
class TextTokenizer {
  public:
    TextTokenizer() = default;
    explicit TextTokenizer(const Vocabulary& vocab);

    /// Splits instructions into whitespace-delimited words and returns the
    /// sorted, de-duplicated word list for Vocabulary::build.
    static std::vector<std::string> collect_words(const std::vector<std::string>& texts);

    /// Encodes a string to text-range IDs. Unknown words raise InvalidArgument.
    std::vector<int> encode(const std::string& text) const;

    /// Joins the surfaces of text-range IDs with single spaces.
    std::string decode(const std::vector<int>& ids) const;

  private:
    std::unordered_map<std::string, int> word_to_id_;
    std::vector<std::string> surfaces_;
    IdRange text_{};
};

} // namespace univla
