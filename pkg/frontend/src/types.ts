export const COMPONENTS = ["lips", "skin", "eyes", "hair", "background"] as const;
export type Component = (typeof COMPONENTS)[number];

/** Serialized color representation as the service exchanges it. */
export interface Representation {
  width: number;
  vectors: Record<Component, number[]>;
  present: Record<Component, boolean>;
}

/** What fills one component slot on the workbench. */
export type SlotConfig =
  | { kind: "empty" }
  | { kind: "reference"; refId: string }
  | { kind: "sample"; seed: number }
  | { kind: "auto" };

/** An uploaded, parsed and encoded reference image. */
export interface ReferenceEntry {
  id: string;
  name: string;
  imageB64: string;
  masksB64: string;
  representation: Representation;
}

/** Everything needed to rebuild one gallery result, byte for byte. */
export interface Provenance {
  slots: Record<Component, SlotConfig>;
  grayB64: string;
  masksB64: string;
  createdAt: string;
}

export interface GalleryEntry {
  id: string;
  imageB64: string;
  representation: Representation;
  provenance: Provenance;
}
