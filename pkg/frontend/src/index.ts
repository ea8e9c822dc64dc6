export * from "./types";
export * from "./api";
export * from "./rubricForm";
export * from "./drafts";
export * from "./render";
export * from "./bundleFlow";
export * from "./qaFlow";
