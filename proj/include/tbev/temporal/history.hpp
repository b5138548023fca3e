#pragma once

#include <deque>

#include "tbev/bev/embedding.hpp"
#include "tbev/temporal/config.hpp"

namespace tbev {

// Ring buffer of the most recent BEV embeddings of one scenario/ego stream,
// oldest first. Single-owner: never share one buffer across streams.
template <typename T>
class HistoryBuffer {
  public:
    explicit HistoryBuffer(int capacity) : cap_(capacity) {
        if (capacity < 0) throw ArgumentError("history capacity must be >= 0");
    }

    void push(BEVEmbedding<T> e) {
        if (cap_ == 0) return;
        if (!entries_.empty() && e.frame_index <= entries_.back().frame_index)
            throw ArgumentError("history push with non-increasing frame index " +
                                std::to_string(e.frame_index));
        entries_.push_back(std::move(e));
        if (int(entries_.size()) > cap_) entries_.pop_front();
    }

    void clear() { entries_.clear(); }
    bool empty() const { return entries_.empty(); }
    int size() const { return int(entries_.size()); }
    int capacity() const { return cap_; }
    const BEVEmbedding<T>& at(int i) const { return entries_[std::size_t(i)]; }

  private:
    int cap_;
    std::deque<BEVEmbedding<T>> entries_;
};

// Feeds a temporal output back into the buffer: the refined embedding by
// default, or the raw input when configured.
template <typename T>
void advance_history(HistoryBuffer<T>& buffer, const BEVEmbedding<T>& raw_current,
                     const BEVEmbedding<T>& refined_out, HistorySource source) {
    if (source == HistorySource::refined) {
        BEVEmbedding<T> e{refined_out.data.detach(), refined_out.frame_index, refined_out.source};
        buffer.push(std::move(e));
    } else {
        BEVEmbedding<T> e{raw_current.data.detach(), raw_current.frame_index, raw_current.source};
        buffer.push(std::move(e));
    }
}

}  // namespace tbev
