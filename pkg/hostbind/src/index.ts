export {
  BindingError,
  CorruptionError,
  DuplicateKeyError,
  ErrorCategory,
  InputError,
  KeyNotFoundError,
  ShapeError,
  StoreExistsError,
  StoreModeError,
  StoreNotFoundError,
} from "./errors.js";
export {
  DtypeName,
  EntryKey,
  EntryMeta,
  FORMAT_VERSION,
  HEADER_LEN,
  SHARD_LIMIT,
  buildShardHeader,
  checkShardHeader,
  crc32,
  decodePayload,
  dtypeFromString,
  encodePayload,
  entrySize,
  f16BitsToF32,
  f32ToF16Bits,
  itemSize,
  keyOf,
  parseManifestLine,
  toManifestLine,
} from "./format.js";
export {
  BoundStore,
  Matrix,
  StoreMode,
  StoreOptions,
  asMatrix,
  boundCreate,
  boundOpen,
} from "./store.js";
export { boundPrefetchIter } from "./prefetch.js";
