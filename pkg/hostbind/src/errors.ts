// Error hierarchy mirroring the primary package's categories, so callers
// can branch on the same distinctions across languages.

export type ErrorCategory = "input" | "store" | "corruption";

export class BindingError extends Error {
  readonly category: ErrorCategory;

  constructor(category: ErrorCategory, message: string) {
    super(message);
    this.name = new.target.name;
    this.category = category;
  }
}

export class InputError extends BindingError {
  constructor(message: string) {
    super("input", message);
  }
}

export class ShapeError extends BindingError {
  constructor(message: string) {
    super("input", message);
  }
}

export class StoreExistsError extends BindingError {
  constructor(message: string) {
    super("store", message);
  }
}

export class StoreNotFoundError extends BindingError {
  constructor(message: string) {
    super("store", message);
  }
}

export class StoreModeError extends BindingError {
  constructor(message: string) {
    super("store", message);
  }
}

export class DuplicateKeyError extends BindingError {
  constructor(message: string) {
    super("store", message);
  }
}

export class KeyNotFoundError extends BindingError {
  constructor(message: string) {
    super("store", message);
  }
}

export class CorruptionError extends BindingError {
  constructor(message: string) {
    super("corruption", message);
  }
}
