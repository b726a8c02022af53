// Read-ahead over a bound store: yields entries in the order requested
// while keeping up to `depth` reads in flight behind the consumer.

import { EntryKey } from "./format.js";
import { BoundStore, Matrix } from "./store.js";

/**
 * Yield [key, matrix] in input order, reading up to `depth` ahead.
 *
 * Depth <= 0 degenerates to sequential gets.  A missing key rejects at
 * its position in the stream.  Abandoning the iterator starts no further
 * reads; at most the current window is ever in flight.
 */
export async function* boundPrefetchIter(
  s: BoundStore,
  keys: Iterable<EntryKey>,
  depth: number,
): AsyncGenerator<[EntryKey, Matrix], void, void> {
  const keyList = Array.from(keys);
  if (depth <= 0) {
    for (const k of keyList) {
      yield [k, await s.getAsync(k.modelId, k.layer, k.docId)];
    }
    return;
  }
  const inflight: Promise<Matrix>[] = [];
  let started = 0;
  const fill = (target: number): void => {
    while (started < keyList.length && started < target) {
      const k = keyList[started]!;
      const p = s.getAsync(k.modelId, k.layer, k.docId);
      p.catch(() => {}); // rethrown when its slot is awaited below
      inflight.push(p);
      started += 1;
    }
  };
  for (let i = 0; i < keyList.length; i++) {
    fill(i + 1 + depth);
    const m = await inflight.shift()!;
    yield [keyList[i]!, m];
  }
}
