// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace storyweave::detail {

extern const char* const kHighLevelTemplate;
extern const char* const kFineGrainedTemplate;

}  // namespace storyweave::detail
