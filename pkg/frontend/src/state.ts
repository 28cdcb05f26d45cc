// View-state container with invariant-preserving updates.

export interface ViewState {
  currentImage: string | null;
  zoom: number;
  panX: number;
  panY: number;
  overlayOpacity: number; // 0..1
  activeClass: number;
  brushRadius: number;
  regionsDone: number;
  regionsTotal: number;
  busyMessage: string | null;
  conflictBanner: string | null;
}

export function initialViewState(): ViewState {
  return {
    currentImage: null,
    zoom: 6,
    panX: 0,
    panY: 0,
    overlayOpacity: 0.45,
    activeClass: 1,
    brushRadius: 2,
    regionsDone: 0,
    regionsTotal: 0,
    busyMessage: null,
    conflictBanner: null,
  };
}

export function setActiveClass(state: ViewState, classId: number, classes: number): ViewState {
  if (classId < 0 || classId >= classes) return state;
  return { ...state, activeClass: classId };
}

export function setOpacity(state: ViewState, opacity: number): ViewState {
  return { ...state, overlayOpacity: Math.min(1, Math.max(0, opacity)) };
}

export function setProgress(state: ViewState, done: number, total: number): ViewState {
  return { ...state, regionsDone: Math.min(done, total), regionsTotal: total };
}

export function setZoom(state: ViewState, zoom: number): ViewState {
  return { ...state, zoom: Math.min(32, Math.max(1, zoom)) };
}
