/******************************************************************************
 * Copyright 2026 The pireg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *	http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace pireg {

inline unsigned resolve_threads(unsigned requested)
{
	if(requested > 0)
		return requested;
	return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * @brief Runs body(i) for i in [0, n) on up to `threads` workers using
 * contiguous static chunks. Callers write only to slot i, so results do not
 * depend on the schedule. The first exception thrown by a worker is rethrown.
 */
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body)
{
	const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), n);
	if(workers <= 1) {
		for(std::size_t i = 0; i < n; ++i)
			body(i);
		return;
	}

	std::vector<std::exception_ptr> errors(workers);
	std::vector<std::thread> pool;
	pool.reserve(workers);
	const std::size_t chunk = (n + workers - 1) / workers;
	for(std::size_t w = 0; w < workers; ++w) {
		pool.emplace_back([&, w] {
			try {
				const std::size_t lo = w * chunk;
				const std::size_t hi = std::min(n, lo + chunk);
				for(std::size_t i = lo; i < hi; ++i)
					body(i);
			} catch(...) {
				errors[w] = std::current_exception();
			}
		});
	}
	for(auto& t : pool)
		t.join();
	for(auto& e : errors)
		if(e)
			std::rethrow_exception(e);
}

} // namespace pireg
